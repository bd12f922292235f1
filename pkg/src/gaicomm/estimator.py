"""scikit-learn style front end for training and evaluating a multi-task link."""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff import Tensor, no_grad
from .channel import Channel, ChannelConfig, bandwidth_ratio, solve_cds
from .encoder import EncoderConfig
from .heads import TaskSpec, task_loss, total_loss
from .metrics import MetricRecord, task_metrics
from .model import ARCHITECTURES, MultiTaskLink, build_link, params_snapshot
from .optim import Adam

logger = logging.getLogger(__name__)

DEFAULT_TASKS = (
    {"kind": "segmentation", "num_classes": 4},
    {"kind": "depth"},
)


class TrainingDivergedError(RuntimeError):
    pass


def resolve_tasks(tasks) -> List[TaskSpec]:
    tasks = DEFAULT_TASKS if tasks is None else tasks
    out = [t if isinstance(t, TaskSpec) else TaskSpec(**t) for t in tasks]
    names = [t.name for t in out]
    if len(set(names)) != len(names):
        raise ValueError(f"task names must be unique, got {names}")
    if not out:
        raise ValueError("at least one task is required")
    return out


def check_images(X, in_channels: Optional[int] = None) -> np.ndarray:
    """Validate a ``B×C×H×W`` float image batch."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
    if X.ndim != 4:
        raise ValueError(f"expected images shaped B×C×H×W, got {X.shape}")
    if in_channels is not None and X.shape[1] != in_channels:
        raise ValueError(f"expected {in_channels} image channels, got {X.shape[1]}")
    return X


def check_targets(y: Mapping[str, np.ndarray], tasks: Sequence[TaskSpec], n: int) -> Dict[str, np.ndarray]:
    """Pick and validate the label array for every task, keyed by task name."""
    if not isinstance(y, Mapping):
        raise TypeError("targets must be a mapping from task name (or kind) to arrays")
    out = {}
    for spec in tasks:
        key = spec.name if spec.name in y else spec.kind
        if key not in y:
            raise KeyError(f"no targets for task {spec.name!r}")
        arr = np.asarray(y[key])
        if arr.shape[0] != n:
            raise ValueError(f"task {spec.name!r}: {arr.shape[0]} targets for {n} images")
        if spec.kind in ("segmentation", "classification"):
            arr = arr.astype(np.int64)
        else:
            arr = arr.astype(np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"task {spec.name!r}: non-finite targets")
        out[spec.name] = arr
    return out


def _batches(n: int, size: int, order: Optional[np.ndarray] = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, size):
        yield idx[start : start + size]


class GAIMultiTaskEstimator(BaseEstimator):
    """Trains encoder, GAI module and task decoders jointly over a simulated channel.

    ``y`` passed to :meth:`fit` maps each task name (or kind) to its labels.
    ``architecture`` picks the GAI variant or ``"basic_multitask"`` (last block
    only, no GAI). Training uses a noiseless channel unless ``train_snr_db`` is
    set.
    """

    def __init__(
        self,
        tasks=None,
        encoder: Optional[EncoderConfig] = None,
        architecture: str = "full",
        c_out: Optional[int] = None,
        iterations: int = 1,
        c_rm: int = 256,
        leaky_slope: float = 0.2,
        normalize_task_weights: bool = False,
        shared_attention_vector: bool = True,
        decoder_hidden: int = 64,
        bandwidth_ratio: Optional[float] = None,
        transmit_power: float = 1.0,
        train_snr_db: Optional[float] = None,
        train_channel_mode: str = "awgn",
        learning_rate: float = 1e-4,
        batch_size: int = 8,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        max_epochs: int = 30,
        patience: int = 10,
        loss_weights="auto",
        validation_fraction: float = 0.125,
        seed: int = 0,
    ):
        self.tasks = tasks
        self.encoder = encoder
        self.architecture = architecture
        self.c_out = c_out
        self.iterations = iterations
        self.c_rm = c_rm
        self.leaky_slope = leaky_slope
        self.normalize_task_weights = normalize_task_weights
        self.shared_attention_vector = shared_attention_vector
        self.decoder_hidden = decoder_hidden
        self.bandwidth_ratio = bandwidth_ratio
        self.transmit_power = transmit_power
        self.train_snr_db = train_snr_db
        self.train_channel_mode = train_channel_mode
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.max_epochs = max_epochs
        self.patience = patience
        self.loss_weights = loss_weights
        self.validation_fraction = validation_fraction
        self.seed = seed

    # ------------------------------------------------------------ construction

    def _encoder_config(self, shape) -> EncoderConfig:
        if self.encoder is None:
            return EncoderConfig(in_channels=shape[0], input_size=tuple(shape[1:]))
        enc = self.encoder if isinstance(self.encoder, EncoderConfig) else EncoderConfig(**self.encoder)
        if tuple(enc.input_size) != tuple(shape[1:]) or enc.in_channels != shape[0]:
            raise ValueError(f"encoder expects {enc.in_channels}×{enc.input_size}, images are {tuple(shape)}")
        return enc

    def initialize(self, input_shape) -> "GAIMultiTaskEstimator":
        """Build an untrained model for ``C×H×W`` inputs (used when restoring checkpoints)."""
        self._init_model(tuple(int(v) for v in input_shape))
        return self

    def _init_model(self, shape) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        self.tasks_ = resolve_tasks(self.tasks)
        self.encoder_ = self._encoder_config(shape)
        _, h_out, w_out = self.encoder_.output_shape
        self.c_ds_ = None
        if self.bandwidth_ratio is not None:
            self.c_ds_, _ = solve_cds(self.bandwidth_ratio, shape, w_out, h_out)
        self.model_ = build_link(
            self.encoder_,
            self.tasks_,
            self.architecture,
            c_out=self.c_out,
            iterations=self.iterations,
            c_rm=self.c_rm,
            leaky_slope=self.leaky_slope,
            normalize_task_weights=self.normalize_task_weights,
            shared_attention_vector=self.shared_attention_vector,
            decoder_hidden=self.decoder_hidden,
            c_ds=self.c_ds_,
            seed=self.seed,
        )
        self.input_shape_ = tuple(shape)

    @property
    def achieved_ratio_(self):
        check_is_fitted(self, "model_")
        _, h, w = self.encoder_.output_shape
        return bandwidth_ratio(self.input_shape_, (self.model_.c_tx, h, w))[2]

    # ------------------------------------------------------------ losses

    def _losses(self, model: MultiTaskLink, X: np.ndarray, y: Dict[str, np.ndarray], idx, channel=None) -> List[Tensor]:
        out = model(Tensor._wrap(X[idx]), channel, self.transmit_power)
        return [task_loss(p, y[s.name][idx], s) for p, s in zip(out["preds"], self.tasks_)]

    def _calibrate_weights(self, X, y) -> List[float]:
        if self.loss_weights != "auto":
            weights = [float(w) for w in self.loss_weights]
            if len(weights) != len(self.tasks_) or min(weights) <= 0:
                raise ValueError("loss_weights must hold one positive weight per task")
            return weights
        fixed = [s.loss_weight for s in self.tasks_]
        idx = np.arange(min(len(X), max(self.batch_size, 1)))
        with no_grad():
            losses = [l.item() for l in self._losses(self.model_, X, y, idx)]
        return [f if f is not None else 1.0 / max(l, 1e-12) for f, l in zip(fixed, losses)]

    def calibrate_loss_weights(self, X, y) -> List[float]:
        """Loss weights this estimator would use, computed on a freshly initialised model."""
        X = check_images(X)
        self._init_model(X.shape[1:])
        return self._calibrate_weights(X, check_targets(y, self.tasks_, len(X)))

    def task_losses(self, X, y, channel: Optional[ChannelConfig] = None, seed: Optional[int] = None, batch_size: int = 64) -> Dict[str, float]:
        """Mean unweighted loss per task over ``X`` (sample-weighted across batches)."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.input_shape_[0])
        y = check_targets(y, self.tasks_, len(X))
        return self._task_losses(X, y, channel, seed, batch_size)

    def _task_losses(self, X, y, channel=None, seed=None, batch_size=64) -> Dict[str, float]:
        ch = None if channel is None else Channel(channel, seed)
        sums = np.zeros(len(self.tasks_))
        with no_grad():
            for idx in _batches(len(X), batch_size):
                losses = self._losses(self.model_, X, y, idx, ch)
                sums += np.array([l.item() for l in losses]) * len(idx)
        return {s.name: float(v / len(X)) for s, v in zip(self.tasks_, sums)}

    def weighted_loss(self, X, y, channel: Optional[ChannelConfig] = None, seed: Optional[int] = None) -> float:
        per_task = self.task_losses(X, y, channel, seed)
        return float(sum(w * per_task[s.name] for w, s in zip(self.loss_weights_, self.tasks_)))

    # ------------------------------------------------------------ training

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_images(X)
        self._init_model(X.shape[1:])
        y = check_targets(y, self.tasks_, len(X))
        if X_val is None:
            n_val = max(1, int(round(len(X) * self.validation_fraction)))
            X, X_val = X[:-n_val], X[-n_val:]
            y, y_val = {k: v[:-n_val] for k, v in y.items()}, {k: v[-n_val:] for k, v in y.items()}
        else:
            X_val = check_images(X_val, X.shape[1])
            y_val = check_targets(y_val, self.tasks_, len(X_val))

        self.loss_weights_ = self._calibrate_weights(X, y)
        params = self.model_.parameters()
        opt = Adam(params, self.learning_rate, (self.beta1, self.beta2), self.epsilon)
        channel = None
        if self.train_snr_db is not None:
            channel = Channel(ChannelConfig(self.train_snr_db, self.transmit_power, self.train_channel_mode), seed=self.seed + 17)
        order_rng = np.random.default_rng([self.seed, 7])

        def val_loss() -> float:
            per = self._task_losses(X_val, y_val)
            return float(sum(w * per[s.name] for w, s in zip(self.loss_weights_, self.tasks_)))

        self.initial_val_loss_ = val_loss()
        self.loss_curve_, self.val_curve_ = [], []
        best, best_state, stale = self.initial_val_loss_, params_snapshot(self.model_), 0
        self.n_epochs_ = 0
        for epoch in range(self.max_epochs):
            order = order_rng.permutation(len(X))
            for step, idx in enumerate(_batches(len(X), self.batch_size, order)):
                try:
                    losses = self._losses(self.model_, X, y, idx, channel)
                    loss = total_loss(losses, self.loss_weights_)
                    opt.zero_grad()
                    loss.backward()
                except FloatingPointError as exc:
                    raise TrainingDivergedError(
                        f"non-finite values at epoch {epoch}, step {step}: {exc}"
                    ) from exc
                opt.step()
                self.loss_curve_.append(loss.item())
            self.n_epochs_ = epoch + 1
            current = val_loss()
            self.val_curve_.append(current)
            logger.info("epoch %d train %.5f val %.5f", epoch, self.loss_curve_[-1], current)
            if current < best:
                best, best_state, stale = current, params_snapshot(self.model_), 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.model_.load_state_dict(best_state)
        self.best_val_loss_ = best
        return self

    def fit_adapter(self, X, y, c_ds: int, epochs: int = 5, learning_rate: float = 1e-3):
        """Train only a fresh ``c_out -> c_ds -> c_out`` adapter with everything else frozen."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.input_shape_[0])
        y = check_targets(y, self.tasks_, len(X))
        self.model_.set_adapter(c_ds)
        self.c_ds_ = c_ds
        adapter_params = self.model_.adapter.parameters()
        frozen = [p for p in self.model_.parameters() if all(p is not q for q in adapter_params)]
        for p in frozen:
            p.requires_grad = False
        try:
            opt = Adam(adapter_params, learning_rate, (self.beta1, self.beta2), self.epsilon)
            rng = np.random.default_rng([self.seed, 11, c_ds])
            for _ in range(epochs):
                for idx in _batches(len(X), self.batch_size, rng.permutation(len(X))):
                    loss = total_loss(self._losses(self.model_, X, y, idx), self.loss_weights_)
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
        finally:
            for p in frozen:
                p.requires_grad = True
        return self

    # ------------------------------------------------------------ inference

    def predict(self, X, channel: Optional[ChannelConfig] = None, seed: Optional[int] = None, batch_size: int = 64) -> Dict[str, np.ndarray]:
        """Raw decoder outputs per task name."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.input_shape_[0])
        ch = None if channel is None else Channel(channel, seed)
        chunks: Dict[str, list] = {s.name: [] for s in self.tasks_}
        with no_grad():
            for idx in _batches(len(X), batch_size):
                out = self.model_(Tensor._wrap(X[idx]), ch, self.transmit_power)
                for s, p in zip(self.tasks_, out["preds"]):
                    chunks[s.name].append(p.data)
        return {k: np.concatenate(v) for k, v in chunks.items()}

    def transform(self, X) -> np.ndarray:
        """Power-normalised channel inputs, shaped ``(T or 1, B, C_tx, H_out, W_out)``."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.input_shape_[0])
        with no_grad():
            out = self.model_(Tensor._wrap(X), None, self.transmit_power)
        return np.stack([t.data for t in out["tx"]])

    def score(self, X, y) -> float:
        """Negative weighted validation loss over a noiseless channel (higher is better)."""
        return -self.weighted_loss(X, y)

    def evaluate(self, X, y, channel: Optional[ChannelConfig] = None, seed: Optional[int] = None) -> List[MetricRecord]:
        """Task metrics plus each task's unweighted ``loss``."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.input_shape_[0])
        y = check_targets(y, self.tasks_, len(X))
        preds = self.predict(X, channel, seed)
        losses = self._task_losses(X, y, channel, seed)
        records = []
        for s in self.tasks_:
            records.extend(task_metrics(s.name, s.kind, preds[s.name], y[s.name], s.num_classes))
            records.append(MetricRecord(s.name, "loss", losses[s.name], "lower_better"))
        return records

    def task_node_weights(self, X) -> np.ndarray:
        """``T×N`` matrix of task-node weights averaged over channels and samples."""
        check_is_fitted(self, "model_")
        if self.model_.gai is None:
            raise ValueError("task-node weights exist only for GAI architectures")
        X = check_images(X, self.input_shape_[0])
        with no_grad():
            e = self.model_.features(Tensor._wrap(X))["e"]
        return np.array([[_shifted_mean(w.data) for w in row] for row in e])


def _shifted_mean(a: np.ndarray) -> float:
    # mean about the first element, so a constant array returns that constant exactly
    ref = a.flat[0]
    return float(ref + np.mean(a - ref))


def snr_grid(lo: float, hi: float, step: float) -> List[float]:
    """Inclusive arithmetic grid ``lo, lo+step, ..., hi``."""
    if step <= 0:
        raise ValueError("step must be positive")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + i * step for i in range(count)]
