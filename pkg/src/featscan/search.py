"""Region similarity scoring and top-k retrieval.

Two scoring routes produce identical results: a brute-force sliding-window
oracle that literally builds the query and region vectors for every offset,
and a fast path that batches all offsets into one cross-correlation. The
oracle exists to audit the fast path; tests pin their agreement to 1e-5.

All similarity arithmetic accumulates in float64 over float32 data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateQueryError, EmptyMaskError, InvalidArgumentError
from .tensors import (
    BoundingBox,
    DownsampledMask,
    FeatureMap,
    apply_mask,
    build_query_vector,
    crop_nonzero,
    mask_support_bbox,
)

# soft cap on einsum working-set elements when scoring a batch of maps
_BATCH_ELEM_BUDGET = 48_000_000


@dataclass(frozen=True)
class QueryFilter:
    """Prepared query: cropped doubly-masked tensor plus the query norm.

    filter is zero wherever mask_crop is zero; query_norm comes from the
    singly-masked query vector, so the mask ends up applied once on the query
    side of every dot product and once on the region side.
    """

    filter: np.ndarray
    bbox: BoundingBox
    mask_crop: np.ndarray
    query_norm: float

    @property
    def support_rows(self) -> int:
        return self.filter.shape[0]

    @property
    def support_cols(self) -> int:
        return self.filter.shape[1]

    @property
    def channels(self) -> int:
        return self.filter.shape[2]


@dataclass(frozen=True)
class RegionScore:
    """Cosine score for one mask placement; valid=False marks zero-norm regions."""

    alpha: int
    beta: int
    score: float
    valid: bool = True


_INVALID_SENTINEL = RegionScore(alpha=-1, beta=-1, score=0.0, valid=False)


@dataclass(frozen=True)
class SearchHit:
    """One ranked result: best region of one dataset image."""

    image_id: str
    score: float
    alpha: int
    beta: int
    region_mask: np.ndarray


def prepare_query(fmap: FeatureMap, mask_l: DownsampledMask) -> QueryFilter:
    """Build the reusable query filter from a feature map and mask.

    Raises EmptyMaskError when the mask has no positive cells and
    DegenerateQueryError when the masked query vector has zero norm.
    """
    masked = apply_mask(fmap, mask_l)
    qvec = build_query_vector(masked, mask_l)
    qnorm = float(np.linalg.norm(qvec.astype(np.float64)))
    if qnorm == 0.0:
        raise DegenerateQueryError("masked query features are all zero")
    cropped, bbox = crop_nonzero(masked, mask_l)
    mask_crop = np.ascontiguousarray(
        mask_l.data[bbox.row0 : bbox.row1, bbox.col0 : bbox.col1]
    )
    return QueryFilter(filter=cropped.data, bbox=bbox, mask_crop=mask_crop, query_norm=qnorm)


def oracle_region_scores(
    fmap_query: FeatureMap, mask_l: DownsampledMask, fmap_search: FeatureMap
) -> list[RegionScore]:
    """Score every in-bounds mask placement by explicit vector construction.

    Offsets (alpha, beta) locate the top-left corner of the mask's support
    box inside the search map; results are ordered row-major over offsets.
    """
    if fmap_search.data.shape != fmap_query.data.shape:
        raise InvalidArgumentError(
            f"search map dims {fmap_search.data.shape} do not match query "
            f"dims {fmap_query.data.shape}"
        )
    qvec = build_query_vector(apply_mask(fmap_query, mask_l), mask_l).astype(np.float64)
    qnorm = math.sqrt(float(np.dot(qvec, qvec)))
    if qnorm == 0.0:
        raise DegenerateQueryError("masked query features are all zero")

    bbox = mask_support_bbox(mask_l)
    sub_mask = mask_l.data[bbox.row0 : bbox.row1, bbox.col0 : bbox.col1]
    active = sub_mask > 0
    rows, cols, _ = fmap_search.data.shape
    h, w = bbox.height, bbox.width

    scores: list[RegionScore] = []
    for alpha in range(rows - h + 1):
        for beta in range(cols - w + 1):
            window = fmap_search.data[alpha : alpha + h, beta : beta + w, :]
            rvec = (window * sub_mask[:, :, None])[active].reshape(-1).astype(np.float64)
            rnorm = math.sqrt(float(np.dot(rvec, rvec)))
            if rnorm == 0.0:
                scores.append(RegionScore(alpha, beta, 0.0, valid=False))
            else:
                cos = float(np.dot(qvec, rvec)) / (qnorm * rnorm)
                # rounding can push |cos| past 1; true cosines never leave [-1, 1]
                cos = min(1.0, max(-1.0, cos))
                scores.append(RegionScore(alpha, beta, cos, valid=True))
    return scores


def _score_batch(qf: QueryFilter, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine scores for a (n, rows, cols, channels) stack, all offsets at once.

    Returns (scores, valid) of shape (n, rows-h+1, cols-w+1). Dot products for
    all offsets come from cross-correlating each map with the query filter;
    region norms come from the same correlation applied to squared features
    and the squared mask.
    """
    h, w = qf.support_rows, qf.support_cols
    n = batch.shape[0]
    data = batch.astype(np.float64)
    windows = sliding_window_view(data, (h, w), axis=(1, 2))  # (n, a, b, d, h, w)
    filt = qf.filter.astype(np.float64)
    mask_sq = qf.mask_crop.astype(np.float64) ** 2

    dots = np.einsum("nabdij,ijd->nab", windows, filt, optimize=True)
    sq_windows = sliding_window_view(data**2, (h, w), axis=(1, 2))
    norms_sq = np.einsum("nabdij,ij->nab", sq_windows, mask_sq, optimize=True)

    valid = norms_sq > 0.0
    norms = np.sqrt(norms_sq, where=valid, out=np.zeros_like(norms_sq))
    scores = np.zeros((n,) + dots.shape[1:], dtype=np.float64)
    np.divide(dots, qf.query_norm * norms, where=valid, out=scores)
    # rounding can push |cos| past 1; true cosines never leave [-1, 1]
    np.clip(scores, -1.0, 1.0, out=scores)
    return scores, valid


def _check_search_dims(qf: QueryFilter, fmap: FeatureMap) -> None:
    if fmap.channels != qf.channels:
        raise InvalidArgumentError(
            f"search map {fmap.image_id!r} has {fmap.channels} channels, "
            f"query filter has {qf.channels}"
        )
    if fmap.rows < qf.support_rows or fmap.cols < qf.support_cols:
        raise InvalidArgumentError(
            f"search map {fmap.image_id!r} spatial dims {fmap.data.shape[:2]} "
            f"are smaller than the query support {qf.support_rows}x{qf.support_cols}"
        )


def conv_region_scores(qf: QueryFilter, fmap_search: FeatureMap) -> list[RegionScore]:
    """Score every mask placement via the cross-correlation fast path.

    Agrees with oracle_region_scores offset by offset and in the same
    row-major order.
    """
    _check_search_dims(qf, fmap_search)
    scores, valid = _score_batch(qf, fmap_search.data[None])
    out: list[RegionScore] = []
    for alpha in range(scores.shape[1]):
        for beta in range(scores.shape[2]):
            if valid[0, alpha, beta]:
                out.append(RegionScore(alpha, beta, float(scores[0, alpha, beta]), True))
            else:
                out.append(RegionScore(alpha, beta, 0.0, False))
    return out


def best_region(scores: list[RegionScore]) -> RegionScore:
    """Highest valid score; ties go to the smaller (alpha, beta) row-major.

    Returns an invalid sentinel when no entry is valid.
    """
    if not scores:
        raise InvalidArgumentError("scores list is empty")
    best: RegionScore | None = None
    for rs in scores:
        if not rs.valid:
            continue
        if best is None or rs.score > best.score or (
            rs.score == best.score and (rs.alpha, rs.beta) < (best.alpha, best.beta)
        ):
            best = rs
    return best if best is not None else _INVALID_SENTINEL


def translate_region_mask(qf: QueryFilter, rows: int, cols: int, alpha: int, beta: int) -> np.ndarray:
    """Place the cropped query mask at (alpha, beta) on a zeroed (rows, cols) grid."""
    out = np.zeros((rows, cols), dtype=np.float32)
    out[alpha : alpha + qf.support_rows, beta : beta + qf.support_cols] = qf.mask_crop
    return out


def _best_offset(scores: np.ndarray, valid: np.ndarray) -> tuple[int, int, float] | None:
    """First-maximum (row-major) valid offset, or None when nothing is valid."""
    if not valid.any():
        return None
    masked = np.where(valid, scores, -np.inf)
    flat = int(np.argmax(masked))
    alpha, beta = divmod(flat, scores.shape[1])
    return alpha, beta, float(scores[alpha, beta])


def _iter_score_arrays(
    qf: QueryFilter, dataset: Iterable[FeatureMap]
) -> Iterator[tuple[FeatureMap, np.ndarray, np.ndarray]]:
    """Yield (map, scores, valid) per image, scoring in memory-bounded batches."""
    first_dims: tuple[int, int, int] | None = None
    pending: list[FeatureMap] = []

    def flush() -> Iterator[tuple[FeatureMap, np.ndarray, np.ndarray]]:
        nonlocal pending
        if not pending:
            return
        stack = np.stack([m.data for m in pending])
        scores, valid = _score_batch(qf, stack)
        for i, fmap in enumerate(pending):
            yield fmap, scores[i], valid[i]
        pending = []

    for fmap in dataset:
        _check_search_dims(qf, fmap)
        if first_dims is None:
            first_dims = fmap.dims
        elif fmap.dims != first_dims:
            raise InvalidArgumentError(
                f"dataset map {fmap.image_id!r} has dims {fmap.dims}, expected {first_dims}"
            )
        pending.append(fmap)
        n_offsets = (fmap.rows - qf.support_rows + 1) * (fmap.cols - qf.support_cols + 1)
        per_map = max(1, n_offsets * qf.channels * qf.support_rows * qf.support_cols)
        if len(pending) * per_map >= _BATCH_ELEM_BUDGET:
            yield from flush()
    yield from flush()


def topk_search(
    qf: QueryFilter,
    dataset: Iterable[FeatureMap],
    k: int,
    *,
    all_regions: bool = False,
    scorer: Callable[[FeatureMap], list[RegionScore]] | None = None,
) -> list[SearchHit]:
    """Rank dataset images by their best region score and return the top k.

    Ties break by score descending, then image id ascending, then row-major
    offset, so results are deterministic. Images whose every region has zero
    norm are skipped. With all_regions=True every scored region competes
    globally instead of one-best-per-image (diagnostic mode). A custom scorer
    (e.g. the oracle path) replaces the fast path when provided.
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")

    candidates: list[tuple[float, str, int, int]] = []
    dataset_dims: tuple[int, int] | None = None

    if scorer is not None:
        for fmap in dataset:
            _check_search_dims(qf, fmap)
            if dataset_dims is None:
                dataset_dims = (fmap.rows, fmap.cols)
            elif (fmap.rows, fmap.cols) != dataset_dims:
                raise InvalidArgumentError(
                    f"dataset map {fmap.image_id!r} has spatial dims "
                    f"{(fmap.rows, fmap.cols)}, expected {dataset_dims}"
                )
            region_scores = scorer(fmap)
            if all_regions:
                candidates.extend(
                    (rs.score, fmap.image_id, rs.alpha, rs.beta)
                    for rs in region_scores
                    if rs.valid
                )
            else:
                best = best_region(region_scores)
                if best.valid:
                    candidates.append((best.score, fmap.image_id, best.alpha, best.beta))
    else:
        for fmap, scores, valid in _iter_score_arrays(qf, dataset):
            if dataset_dims is None:
                dataset_dims = (fmap.rows, fmap.cols)
            if all_regions:
                for alpha, beta in np.argwhere(valid):
                    candidates.append(
                        (float(scores[alpha, beta]), fmap.image_id, int(alpha), int(beta))
                    )
            else:
                best = _best_offset(scores, valid)
                if best is not None:
                    candidates.append((best[2], fmap.image_id, best[0], best[1]))

    candidates.sort(key=lambda c: (-c[0], c[1], c[2], c[3]))
    hits: list[SearchHit] = []
    for score, image_id, alpha, beta in candidates[:k]:
        assert dataset_dims is not None
        region_mask = translate_region_mask(qf, dataset_dims[0], dataset_dims[1], alpha, beta)
        hits.append(SearchHit(image_id, score, alpha, beta, region_mask))
    return hits
