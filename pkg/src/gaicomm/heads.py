"""Task decoders and per-task losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    bilinear_resize,
    global_avg_pool,
    linear,
    log_softmax,
    maximum,
    relu,
    sqrt,
    tabs,
    tsum,
)
from .nn import Conv2d, Module

TASK_KINDS = ("segmentation", "depth", "surface_normal", "keypoint", "edge", "classification")
DILATIONS = (6, 12, 18, 24)
IGNORE_INDEX = -1


@dataclass
class TaskSpec:
    kind: str
    num_classes: int = 0
    loss_weight: Optional[float] = None
    dilation: int = 6
    name: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind in ("segmentation", "classification") and self.num_classes < 2:
            raise ValueError(f"{self.kind} needs num_classes >= 2")
        if self.loss_weight is not None and self.loss_weight <= 0:
            raise ValueError("loss_weight must be positive")
        if self.dilation not in DILATIONS:
            raise ValueError(f"dilation must be one of {DILATIONS}")
        if self.name is None:
            self.name = self.kind

    @property
    def out_channels(self) -> int:
        if self.kind in ("segmentation", "classification"):
            return self.num_classes
        return 3 if self.kind == "surface_normal" else 1

    @property
    def dense(self) -> bool:
        return self.kind != "classification"


class TaskDecoder(Module):
    """Dilated 3×3 conv, 1×1 conv, then a 1×1 conv (or linear head) to the task's outputs."""

    def __init__(self, rng: np.random.Generator, spec: TaskSpec, c_in: int, hidden: int = 64) -> None:
        d = spec.dilation
        self.layer1 = Conv2d(rng, c_in, hidden, 3, padding=d, dilation=d)
        self.layer2 = Conv2d(rng, hidden, hidden, 1)
        self.layer3 = Conv2d(rng, hidden, spec.out_channels, 1)
        self._spec = spec
        self._c_in = c_in

    def __call__(self, z: Tensor, out_size: Optional[Tuple[int, int]] = None) -> Tensor:
        return decode_task(z, self, self._spec, out_size)


def decode_task(
    z: Tensor, decoder: TaskDecoder, spec: TaskSpec, out_size: Optional[Tuple[int, int]] = None
) -> Tensor:
    """Map a received feature to task outputs.

    Dense tasks are upsampled bilinearly to ``out_size`` when given.
    Classification pools globally before the final layer, applied as a linear map.
    """
    if z.shape[-3] != decoder._c_in:
        raise ValueError(f"decoder expects {decoder._c_in} channels, got {z.shape[-3]}")
    h = relu(decoder.layer2(relu(decoder.layer1(z))))
    if not spec.dense:
        w = decoder.layer3.weight
        return linear(global_avg_pool(h), w.reshape(w.shape[0], w.shape[1]), decoder.layer3.bias)
    y = decoder.layer3(h)
    if out_size is not None and tuple(y.shape[-2:]) != tuple(out_size):
        y = bilinear_resize(y, *out_size)
    return y


# ---------------------------------------------------------------- losses


def loss_seg(logits: Tensor, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean cross-entropy over non-ignored pixels.

    ``logits`` is ``(K, H, W)`` or ``(B, K, H, W)``; ``labels`` drops the class axis.
    Classification logits ``(B, K)`` with labels ``(B,)`` are accepted too.
    """
    labels = np.asarray(labels)
    k = logits.shape[1] if logits.ndim in (2, 4) else logits.shape[0]
    axis = 1 if logits.ndim in (2, 4) else 0
    valid = labels != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise ValueError("loss_seg: every pixel is ignored")
    if ((labels[valid] < 0) | (labels[valid] >= k)).any():
        raise ValueError("loss_seg: labels outside [0, K)")
    onehot = np.zeros(logits.shape)
    idx = np.where(valid, labels, 0)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)
    onehot *= np.expand_dims(valid, axis)
    logp = log_softmax(logits, axis=axis)
    return tsum(logp * Tensor._wrap(onehot)) * (-1.0 / count)


def loss_l1(pred: Tensor, target, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean absolute error, optionally restricted to ``mask``."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"loss_l1: shape mismatch {pred.shape} vs {target.shape}")
    diff = tabs(pred - target)
    if mask is None:
        return diff.mean()
    mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), pred.shape)
    count = float(mask.sum())
    if count == 0:
        raise ValueError("loss_l1: empty mask")
    return tsum(diff * Tensor._wrap(mask)) * (1.0 / count)


def loss_sn(pred: Tensor, target, eps: float = 1e-8) -> Tensor:
    """Mean ``1 - cos`` between predicted and ground-truth normals (channel axis ``-3``)."""
    target = as_tensor(target)
    if pred.shape != target.shape or pred.shape[-3] != 3:
        raise ValueError("loss_sn expects matching (..., 3, H, W) tensors")
    norm = maximum(sqrt(tsum(pred * pred, axis=-3, keepdims=True) + 1e-30), eps)
    cos = tsum((pred / norm) * target, axis=-3)
    return (1.0 - cos).mean()


def total_loss(losses: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    if len(losses) != len(weights):
        raise ValueError("total_loss: one weight per task loss is required")
    out = None
    for loss, w in zip(losses, weights):
        term = as_tensor(loss) * float(w)
        out = term if out is None else out + term
    return out


def task_loss(pred: Tensor, target, spec: TaskSpec) -> Tensor:
    if spec.kind in ("segmentation", "classification"):
        return loss_seg(pred, target)
    if spec.kind == "surface_normal":
        return loss_sn(pred, target)
    return loss_l1(pred, target)
