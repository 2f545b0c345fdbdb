"""ISIC-style segmentation scores: Jaccard, Dice, accuracy, sensitivity, specificity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("JA", "DI", "AC", "SE", "SP")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


def _binary(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be a binary mask")
    return arr.astype(bool)


def confusion(pred_mask, gt_mask) -> ConfusionCounts:
    pred = _binary(pred_mask, "pred_mask")
    gt = _binary(gt_mask, "gt_mask")
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, pred.size - tp - fp - fn, fn)


def _ratio(num: int, den: int) -> float:
    # a zero denominator means the quantity is vacuously perfect (e.g. empty pred and empty gt)
    return 1.0 if den == 0 else num / den


def metrics(counts: ConfusionCounts) -> dict[str, float]:
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    return {
        "JA": _ratio(tp, tp + fp + fn),
        "DI": _ratio(2 * tp, 2 * tp + fp + fn),
        "AC": _ratio(tp + tn, counts.total),
        "SE": _ratio(tp, tp + fn),
        "SP": _ratio(tn, tn + fp),
    }


def average_metrics(per_image: list[dict[str, float]]) -> dict[str, float]:
    if not per_image:
        raise ValueError("no images to average")
    return {k: float(np.mean([m[k] for m in per_image])) for k in METRIC_NAMES}
