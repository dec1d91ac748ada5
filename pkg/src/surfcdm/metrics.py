"""Segmentation quality metrics and ensemble uncertainty maps.

All metrics operate on Cartesian binary masks at the evaluation
resolution. Empty-vs-empty overlap is defined as 1.0 and
empty-vs-nonempty as 0.0 so batch evaluation never raises; hd95 alone
requires both masks non-empty because boundary distances are undefined
otherwise.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMaskError, ShapeMismatchError, TooFewRunsError


@dataclass(frozen=True)
class MetricsRecord:
    dsc: float
    iou: float
    hd95: float


@dataclass
class UncertaintyMap:
    mean: np.ndarray
    sd: np.ndarray
    runs: int


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")


def dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice similarity coefficient 2|A∩B| / (|A|+|B|)."""
    _check_shapes(a, b)
    a = a.astype(bool)
    b = b.astype(bool)
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return 2.0 * float(np.logical_and(a, b).sum()) / float(denom)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union |A∩B| / |A∪B|."""
    _check_shapes(a, b)
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """(N, 2) array of (x, y) foreground pixels 4-adjacent to background.

    Pixels on the array edge count as boundary (outside is background).
    """
    m = mask.astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    ys, xs = np.nonzero(m & ~interior)
    return np.stack([xs, ys], axis=1).astype(float)


def hd95(a: np.ndarray, b: np.ndarray) -> float:
    """95th percentile of pooled symmetric boundary-to-boundary distances.

    Directed nearest Euclidean distances are computed both ways and pooled
    before taking the linearly interpolated percentile.
    """
    _check_shapes(a, b)
    pa = boundary_pixels(a)
    pb = boundary_pixels(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyMaskError("hd95 requires both masks to be non-empty")
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    pooled = np.concatenate([d_ab, d_ba])
    return float(np.percentile(pooled, 95.0))


def uncertainty(masks: list[np.ndarray]) -> UncertaintyMap:
    """Per-pixel mean and population SD over K binary segmentation runs."""
    if len(masks) < 2:
        raise TooFewRunsError(f"need at least 2 runs, got {len(masks)}")
    shape = masks[0].shape
    for m in masks[1:]:
        if m.shape != shape:
            raise ShapeMismatchError(f"run shapes differ: {m.shape} vs {shape}")
    stack = np.stack([m.astype(float) for m in masks])
    return UncertaintyMap(stack.mean(axis=0), stack.std(axis=0, ddof=0), len(masks))


@dataclass
class EvalReport:
    """Per-image metric records plus mean ± SD aggregates."""

    image_ids: list[str]
    records: list[MetricsRecord]

    def aggregate(self) -> tuple[MetricsRecord, MetricsRecord]:
        """(mean, SD) over all records; population SD."""
        arr = np.array([[r.dsc, r.iou, r.hd95] for r in self.records], dtype=float)
        mean = arr.mean(axis=0)
        sd = arr.std(axis=0, ddof=0)
        return MetricsRecord(*mean), MetricsRecord(*sd)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "dsc", "iou", "hd95"])
        for image_id, rec in zip(self.image_ids, self.records):
            writer.writerow([image_id, repr(rec.dsc), repr(rec.iou), repr(rec.hd95)])
        mean, sd = self.aggregate()
        writer.writerow(
            [
                "MEAN±SD",
                f"{mean.dsc:.6f}±{sd.dsc:.6f}",
                f"{mean.iou:.6f}±{sd.iou:.6f}",
                f"{mean.hd95:.6f}±{sd.hd95:.6f}",
            ]
        )
        return buf.getvalue()

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def score_pair(prediction: np.ndarray, truth: np.ndarray) -> MetricsRecord:
    return MetricsRecord(dsc(prediction, truth), iou(prediction, truth), hd95(prediction, truth))


def evaluate(samples, model, cfg, seed: int = 0) -> EvalReport:
    """Segment every sample and score it against the stored reference mask.

    ``samples`` is a loaded dataset split; per-image sampler seeds are
    spawned from ``seed`` so the report is reproducible. A degenerate
    empty prediction scores the image diagonal as hd95 instead of failing,
    so reports on broken models stay well defined.
    """
    from .sampler import segment  # local import: metrics stays importable on its own

    run_seeds = np.random.SeedSequence(seed).generate_state(max(len(samples), 1))
    ids, records = [], []
    for sample, run_seed in zip(samples, run_seeds):
        prediction, _ = segment(
            sample.image, model, cfg, int(run_seed), ground_truth_centroid=sample.centroid
        )
        ids.append(sample.id)
        try:
            records.append(score_pair(prediction, sample.mask))
        except EmptyMaskError:
            diagonal = float(np.hypot(*sample.mask.shape))
            records.append(
                MetricsRecord(dsc(prediction, sample.mask), iou(prediction, sample.mask), diagonal)
            )
    return EvalReport(ids, records)
