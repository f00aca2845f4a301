"""Quantitative analyses over search results.

Covers result-set class diversity, cross-model result overlap, and
nearest-neighbor-region IoU against ground-truth boxes binned by face area.
Result sets and ground-truth boxes travel as line-delimited JSON; aggregate
reports are emitted as JSON or CSV (schemas in the README).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .search import SearchHit
from .tensors import BoundingBox


class SizeBin(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"
    XLARGE = "xlarge"


@dataclass(frozen=True)
class ResultSet:
    """Top-k hits recorded for one query."""

    query_id: str
    hits: tuple[SearchHit, ...]

    def image_ids(self) -> list[str]:
        return [h.image_id for h in self.hits]


@dataclass(frozen=True)
class GroundTruthBox:
    """Annotated box in image pixel coordinates, with the image's pixel dims."""

    image_id: str
    box: BoundingBox
    image_rows: int
    image_cols: int

    @property
    def area(self) -> int:
        return self.box.area


def unique_class_count(rs: ResultSet, labels: Mapping[str, str]) -> int:
    """Number of distinct labels among the hits."""
    seen: set[str] = set()
    for hit in rs.hits:
        if hit.image_id not in labels:
            raise InvalidArgumentError(f"no label for image id {hit.image_id!r}")
        seen.add(labels[hit.image_id])
    return len(seen)


def overlap_count(a: ResultSet, b: ResultSet) -> int:
    """Number of image ids the two result sets share."""
    return len(set(a.image_ids()) & set(b.image_ids()))


def neighbor_bbox(hit: SearchHit, image_rows: int, image_cols: int) -> BoundingBox:
    """Tight box of the hit's region mask, scaled to pixels, rounded outward."""
    mask = hit.region_mask
    active = mask > 0
    if not active.any():
        raise InvalidArgumentError(f"hit {hit.image_id!r} has an empty region mask")
    rows = np.flatnonzero(active.any(axis=1))
    cols = np.flatnonzero(active.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    row_scale = image_rows / mask.shape[0]
    col_scale = image_cols / mask.shape[1]
    return BoundingBox(
        math.floor(r0 * row_scale),
        math.floor(c0 * col_scale),
        math.ceil(r1 * row_scale),
        math.ceil(c1 * col_scale),
    )


def union_neighbor_bbox(hits: Sequence[SearchHit], image_rows: int, image_cols: int) -> BoundingBox:
    """Smallest box covering every hit's neighbor box."""
    if not hits:
        raise InvalidArgumentError("no hits to take a union over")
    boxes = [neighbor_bbox(h, image_rows, image_cols) for h in hits]
    return BoundingBox(
        min(b.row0 for b in boxes),
        min(b.col0 for b in boxes),
        max(b.row1 for b in boxes),
        max(b.col1 for b in boxes),
    )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    inter_rows = min(a.row1, b.row1) - max(a.row0, b.row0)
    inter_cols = min(a.col1, b.col1) - max(a.col0, b.col0)
    if inter_rows <= 0 or inter_cols <= 0:
        return 0.0
    inter = inter_rows * inter_cols
    union = a.area + b.area - inter
    return inter / union


def bin_by_area(area: float) -> SizeBin:
    """Half-open area bins: <1k, [1k,5k), [5k,20k), >=20k square pixels."""
    if area <= 0:
        raise InvalidArgumentError(f"area must be positive, got {area}")
    if area < 1000:
        return SizeBin.SMALL
    if area < 5000:
        return SizeBin.MEDIUM
    if area < 20000:
        return SizeBin.LARGE
    return SizeBin.XLARGE


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and standard error (sample stddev over sqrt(N))."""
    if not values:
        raise InvalidArgumentError("cannot aggregate an empty list")
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size == 1:
        return mean, 0.0
    se = float(arr.std(ddof=1) / math.sqrt(arr.size))
    return mean, se


@dataclass
class BinnedIoUReport:
    """Per-size-bin IoU aggregates for a batch of queries."""

    mode: str
    bins: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "bins": self.bins}


def iou_by_face_size(
    result_sets: Iterable[ResultSet],
    ground_truth: Mapping[str, GroundTruthBox],
    mode: str = "top1",
) -> BinnedIoUReport:
    """IoU of neighbor boxes vs ground truth, aggregated per face-size bin.

    mode "top1" uses the best hit's box; "union" covers all hits. Queries
    without ground truth are skipped.
    """
    if mode not in ("top1", "union"):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    per_bin: dict[str, list[float]] = {b.value: [] for b in SizeBin}
    for rs in result_sets:
        gt = ground_truth.get(rs.query_id)
        if gt is None or not rs.hits:
            continue
        if mode == "top1":
            nb = neighbor_bbox(rs.hits[0], gt.image_rows, gt.image_cols)
        else:
            nb = union_neighbor_bbox(rs.hits, gt.image_rows, gt.image_cols)
        per_bin[bin_by_area(gt.area).value].append(iou(nb, gt.box))
    report = BinnedIoUReport(mode=mode)
    for name, values in per_bin.items():
        if values:
            mean, se = aggregate(values)
            report.bins[name] = {"mean": mean, "se": se, "n": len(values)}
        else:
            report.bins[name] = {"mean": None, "se": None, "n": 0}
    return report


# -- line-delimited JSON interchange -------------------------------------------


def read_result_sets(path) -> list[ResultSet]:
    """Load result sets from LDJSON: one {query_id, hits:[...]} per line."""
    out: list[ResultSet] = []
    for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            hits = tuple(
                SearchHit(
                    image_id=h["image_id"],
                    score=float(h["score"]),
                    alpha=int(h["alpha"]),
                    beta=int(h["beta"]),
                    region_mask=np.asarray(h["region_mask"], dtype=np.float32)
                    if "region_mask" in h
                    else np.zeros((1, 1), dtype=np.float32),
                )
                for h in doc["hits"]
            )
            out.append(ResultSet(query_id=doc["query_id"], hits=hits))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"{path} line {line_no}: {exc}") from exc
    return out


def read_ground_truth_boxes(path) -> dict[str, GroundTruthBox]:
    """Load ground-truth boxes from LDJSON keyed by image id."""
    out: dict[str, GroundTruthBox] = {}
    for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            box = doc["box"]
            gt = GroundTruthBox(
                image_id=doc["image_id"],
                box=BoundingBox(box["row0"], box["col0"], box["row1"], box["col1"]),
                image_rows=int(doc["image_rows"]),
                image_cols=int(doc["image_cols"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"{path} line {line_no}: {exc}") from exc
        out[gt.image_id] = gt
    return out


def write_report_json(report: BinnedIoUReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")


def write_report_csv(report: BinnedIoUReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "mean_iou", "standard_error", "n"])
        for name in [b.value for b in SizeBin]:
            row = report.bins.get(name, {"mean": None, "se": None, "n": 0})
            writer.writerow([name, row["mean"], row["se"], row["n"]])
