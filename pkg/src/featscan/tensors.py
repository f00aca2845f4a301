"""Dense tensor and mask primitives.

Feature maps are (rows, cols, channels) float32 arrays. Masks are (rows, cols)
float32 arrays with values in [0, 1]; a cell participates in a query whenever
its mask value is strictly positive, so fractional brush opacity is honored
end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError, InvalidArgumentError


def _as_float32(data, ndim: int, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != ndim:
        raise InvalidArgumentError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if any(s < 1 for s in arr.shape):
        raise InvalidArgumentError(f"{what} has an empty dimension: shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """One image's activation tensor at one layer: (rows, cols, channels) float32."""

    image_id: str
    data: np.ndarray

    def __post_init__(self):
        arr = _as_float32(self.data, 3, "feature map")
        if not np.isfinite(arr).all():
            raise InvalidArgumentError(f"feature map {self.image_id!r} contains NaN or Inf")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


def _check_mask_values(arr: np.ndarray, what: str) -> None:
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidArgumentError(f"{what} values must lie in [0, 1]")


@dataclass(frozen=True)
class ImageMask:
    """Full-resolution user highlight: (rows, cols) floats in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float32(self.data, 2, "mask")
        _check_mask_values(arr, "mask")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class DownsampledMask:
    """Mask resampled to a feature map's spatial resolution."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float32(self.data, 2, "downsampled mask")
        _check_mask_values(arr, "downsampled mask")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def positive_count(self) -> int:
        return int(np.count_nonzero(self.data > 0))


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open box on an integer grid: rows [row0, row1), cols [col0, col1)."""

    row0: int
    col0: int
    row1: int
    col1: int

    def __post_init__(self):
        if not (0 <= self.row0 < self.row1 and 0 <= self.col0 < self.col1):
            raise InvalidArgumentError(
                f"invalid bounding box ({self.row0},{self.col0})-({self.row1},{self.col1})"
            )

    @property
    def height(self) -> int:
        return self.row1 - self.row0

    @property
    def width(self) -> int:
        return self.col1 - self.col0

    @property
    def area(self) -> int:
        return self.height * self.width


def _overlap_weights(n_in: int, n_out: int) -> np.ndarray:
    """Integer overlap matrix between output footprints and input cells.

    Entry (o, i) is the overlap length between output cell o's footprint
    [o*n_in/n_out, (o+1)*n_in/n_out) and input cell [i, i+1), scaled by n_out
    so every value is an exact integer. Each row sums to exactly n_in.
    """
    o = np.arange(n_out, dtype=np.int64)[:, None]
    i = np.arange(n_in, dtype=np.int64)[None, :]
    lo = np.maximum(o * n_in, i * n_out)
    hi = np.minimum((o + 1) * n_in, (i + 1) * n_out)
    return np.maximum(hi - lo, 0).astype(np.float64)


def downsample_mask(mask: ImageMask, target_rows: int, target_cols: int) -> DownsampledMask:
    """Area-average pool a mask down to (target_rows, target_cols).

    Each output cell is the mean of the input cells its footprint covers,
    with fractional footprints weighted by overlap area. An all-ones input
    yields an all-ones output exactly; output values stay in [0, 1].
    """
    rows, cols = mask.rows, mask.cols
    if target_rows < 1 or target_cols < 1:
        raise InvalidArgumentError("target dimensions must be positive")
    if target_rows > rows or target_cols > cols:
        raise InvalidArgumentError(
            f"target {target_rows}x{target_cols} exceeds source {rows}x{cols}"
        )
    wr = _overlap_weights(rows, target_rows)
    wc = _overlap_weights(cols, target_cols)
    pooled = wr @ mask.data.astype(np.float64) @ wc.T
    pooled /= float(rows) * float(cols)
    # guard against last-bit roundoff drifting outside [0, 1]
    np.clip(pooled, 0.0, 1.0, out=pooled)
    return DownsampledMask(pooled)


def apply_mask(fmap: FeatureMap, mask_l: DownsampledMask) -> FeatureMap:
    """Scale every channel vector by its cell's mask value."""
    if fmap.data.shape[:2] != mask_l.data.shape:
        raise InvalidArgumentError(
            f"mask shape {mask_l.data.shape} does not match feature map "
            f"spatial dims {fmap.data.shape[:2]}"
        )
    return FeatureMap(fmap.image_id, fmap.data * mask_l.data[:, :, None])


def build_query_vector(masked: FeatureMap, mask_l: DownsampledMask) -> np.ndarray:
    """Concatenate channel vectors at all positive-mask cells, row-major.

    Returns a flat float32 vector of length (positive cell count) * channels.
    """
    if masked.data.shape[:2] != mask_l.data.shape:
        raise InvalidArgumentError(
            f"mask shape {mask_l.data.shape} does not match feature map "
            f"spatial dims {masked.data.shape[:2]}"
        )
    active = mask_l.data > 0
    if not active.any():
        raise EmptyMaskError("mask has no positive cells")
    # boolean indexing scans row-major, matching the required concatenation order
    return masked.data[active].reshape(-1)


def mask_support_bbox(mask_l: DownsampledMask) -> BoundingBox:
    """Tight bounding box of the mask's positive cells."""
    active = mask_l.data > 0
    if not active.any():
        raise EmptyMaskError("mask has no positive cells")
    row_any = active.any(axis=1)
    col_any = active.any(axis=0)
    rows = np.flatnonzero(row_any)
    cols = np.flatnonzero(col_any)
    return BoundingBox(int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)


def crop_nonzero(masked: FeatureMap, mask_l: DownsampledMask) -> tuple[FeatureMap, BoundingBox]:
    """Apply the mask a second time and crop to the positive-mask support.

    The returned tensor holds the input features weighted by the mask twice
    (mask squared for already-masked input), restricted to the tight bounding
    box of positive cells.
    """
    if masked.data.shape[:2] != mask_l.data.shape:
        raise InvalidArgumentError(
            f"mask shape {mask_l.data.shape} does not match feature map "
            f"spatial dims {masked.data.shape[:2]}"
        )
    bbox = mask_support_bbox(mask_l)
    doubled = masked.data * mask_l.data[:, :, None]
    cropped = doubled[bbox.row0 : bbox.row1, bbox.col0 : bbox.col1, :]
    return FeatureMap(masked.image_id, cropped), bbox
