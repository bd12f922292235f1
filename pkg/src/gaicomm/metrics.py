"""Task metrics and the relative-improvement summary against single-task baselines."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

HIGHER = "higher_better"
LOWER = "lower_better"

DEPTH_THRESHOLDS = (1.25, 1.25**2, 1.25**3)
NORMAL_THRESHOLDS = (11.25, 22.5, 30.0)

# Direction of every metric name emitted by ``task_metrics``.
DIRECTIONS = {
    "miou": HIGHER,
    "pixel_acc": HIGHER,
    "abs_err": LOWER,
    "rel_err": LOWER,
    "delta_1.25": HIGHER,
    "delta_1.5625": HIGHER,
    "delta_1.953125": HIGHER,
    "angle_mean": LOWER,
    "angle_median": LOWER,
    "angle_11.25": HIGHER,
    "angle_22.5": HIGHER,
    "angle_30": HIGHER,
    "l1": LOWER,
    "accuracy": HIGHER,
    "loss": LOWER,
}


@dataclass
class MetricRecord:
    task: str
    metric: str
    value: float
    direction: str

    def as_dict(self) -> dict:
        return asdict(self)


def seg_metrics(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> Tuple[float, float]:
    """``(mIoU, pixel accuracy)`` in percent.

    mIoU averages over the classes present in either map.
    """
    pred, gt = np.asarray(pred).ravel(), np.asarray(gt).ravel()
    if pred.size == 0 or pred.shape != gt.shape:
        raise ValueError("seg_metrics: empty or mismatched inputs")
    ious = []
    for c in range(num_classes):
        p, g = pred == c, gt == c
        union = np.count_nonzero(p | g)
        if union:
            ious.append(np.count_nonzero(p & g) / union)
    acc = np.count_nonzero(pred == gt) / gt.size
    return 100.0 * float(np.mean(ious)), 100.0 * acc


def depth_metrics(
    pred: np.ndarray, gt: np.ndarray, thresholds: Sequence[float] = DEPTH_THRESHOLDS
) -> Tuple[float, float, List[float]]:
    """``(abs, rel, [δ-fraction % per threshold])`` over pixels with positive ground truth.

    Non-positive predictions never pass a δ threshold.
    """
    pred, gt = np.asarray(pred, dtype=float).ravel(), np.asarray(gt, dtype=float).ravel()
    keep = gt > 0
    if not keep.any():
        raise ValueError("depth_metrics: no pixel with positive ground truth")
    d, dg = pred[keep], gt[keep]
    err = np.abs(d - dg)
    ratio = np.full(d.shape, np.inf)
    pos = d > 0
    ratio[pos] = np.maximum(d[pos] / dg[pos], dg[pos] / d[pos])
    fractions = [100.0 * float(np.mean(ratio < thr)) for thr in thresholds]
    return float(err.mean()), float((err / dg).mean()), fractions


def normal_angles(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-pixel angle in degrees between normal fields with channels on axis ``-3``."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    pn = pred / np.maximum(np.linalg.norm(pred, axis=-3, keepdims=True), eps)
    gn = gt / np.maximum(np.linalg.norm(gt, axis=-3, keepdims=True), eps)
    cos = np.clip(np.sum(pn * gn, axis=-3), -1.0, 1.0)
    return np.degrees(np.arccos(cos)).ravel()


def normal_metrics(
    pred: np.ndarray, gt: np.ndarray, thresholds: Sequence[float] = NORMAL_THRESHOLDS
) -> Tuple[float, float, List[float]]:
    """``(mean°, median°, [% of pixels under each threshold])``."""
    ang = normal_angles(pred, gt)
    return (
        float(ang.mean()),
        float(np.median(ang)),
        [100.0 * float(np.mean(ang < thr)) for thr in thresholds],
    )


def task_metrics(task: str, kind: str, pred: np.ndarray, target: np.ndarray, num_classes: int = 0) -> List[MetricRecord]:
    """Evaluate one task's predictions; ``pred`` is raw decoder output."""
    out: Dict[str, float] = {}
    if kind == "segmentation":
        out["miou"], out["pixel_acc"] = seg_metrics(pred.argmax(axis=-3), target, num_classes)
    elif kind == "classification":
        out["accuracy"] = 100.0 * float(np.mean(pred.argmax(axis=-1) == np.asarray(target)))
    elif kind == "depth":
        out["abs_err"], out["rel_err"], fr = depth_metrics(pred, target)
        out.update(zip(("delta_1.25", "delta_1.5625", "delta_1.953125"), fr))
    elif kind == "surface_normal":
        out["angle_mean"], out["angle_median"], fr = normal_metrics(pred, target)
        out.update(zip(("angle_11.25", "angle_22.5", "angle_30"), fr))
    else:
        out["l1"] = float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))
    return [MetricRecord(task, name, value, DIRECTIONS[name]) for name, value in out.items()]


def relative_improvement(
    model: Mapping[str, Mapping[str, float]],
    baseline: Mapping[str, Mapping[str, float]],
    directions: Mapping[str, str] = DIRECTIONS,
    skip_zero_baseline: bool = False,
) -> Tuple[Dict[str, float], float]:
    """Per-task mean signed relative change (%) against the baseline, and its mean over tasks.

    ``model[task][metric]`` and ``baseline[task][metric]`` must cover the same metrics.
    A zero baseline value raises unless ``skip_zero_baseline``, which drops that term.
    """
    per_task = {}
    for task, metrics in model.items():
        base = baseline[task]
        if set(base) != set(metrics):
            raise ValueError(f"task {task!r}: model and baseline report different metrics")
        terms = []
        for name, value in metrics.items():
            ref = base[name]
            if ref == 0:
                if skip_zero_baseline:
                    logger.warning("task %s: baseline %s is zero, term dropped", task, name)
                    continue
                raise ValueError(f"task {task!r}: baseline {name} is zero")
            sign = 1.0 if directions[name] == HIGHER else -1.0
            terms.append(sign * (value - ref) / ref * 100.0)
        if not terms:
            raise ValueError(f"task {task!r}: every baseline metric is zero")
        per_task[task] = float(np.mean(terms))
    return per_task, float(np.mean(list(per_task.values())))


def records_to_table(records: Iterable[MetricRecord]) -> Dict[str, Dict[str, float]]:
    table: Dict[str, Dict[str, float]] = {}
    for r in records:
        table.setdefault(r.task, {})[r.metric] = r.value
    return table
