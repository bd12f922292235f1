"""Experiment orchestration: training runs, channel sweeps, ablations, complexity reports, persistence."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import FlopCounter, Tensor, no_grad
from .channel import ChannelConfig, solve_cds
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .encoder import EncoderConfig
from .estimator import GAIMultiTaskEstimator
from .gai import GAIModule, GaiConfig, flop_count_gai
from .heads import TaskSpec
from .metrics import MetricRecord, records_to_table, relative_improvement
from .model import params_snapshot
from .synth import make_dataset

logger = logging.getLogger(__name__)

RESULT_HEADER = (
    "run_id",
    "variant",
    "task",
    "metric",
    "direction",
    "snr_db",
    "bandwidth_ratio",
    "channel_mode",
    "seed",
    "value",
)
ABLATION_VARIANTS = ("single_task", "basic_multitask", "gai_w", "simp_att", "full")


@dataclass
class Data:
    X_train: np.ndarray
    y_train: Dict[str, np.ndarray]
    X_val: np.ndarray
    y_val: Dict[str, np.ndarray]


def make_data(cfg: RunConfig) -> Data:
    """Synthetic train/validation scenes from disjoint seed streams of ``cfg.seed``."""
    h, w = cfg.encoder_config().input_size
    tr = cfg.raw["train"]
    kinds = sorted({s.kind for s in cfg.task_specs()})
    X, y = make_dataset(tr["n_train"], cfg.seed, h, w, tr["num_classes"], 0, kinds)
    Xv, yv = make_dataset(tr["n_val"], cfg.seed, h, w, tr["num_classes"], 1, kinds)
    return Data(X, y, Xv, yv)


def make_estimator(
    cfg: RunConfig,
    architecture: Optional[str] = None,
    tasks: Optional[Sequence[TaskSpec]] = None,
    loss_weights=None,
) -> GAIMultiTaskEstimator:
    g, tr = cfg.raw["gai"], cfg.raw["train"]
    return GAIMultiTaskEstimator(
        tasks=list(tasks) if tasks is not None else cfg.task_specs(),
        encoder=cfg.encoder_config(),
        architecture=architecture or g["architecture"],
        c_out=g["c_out"],
        iterations=g["iterations"],
        c_rm=g["c_rm"],
        leaky_slope=g["leaky_slope"],
        normalize_task_weights=g["normalize_task_weights"],
        shared_attention_vector=g["shared_attention_vector"],
        decoder_hidden=tr["decoder_hidden"],
        bandwidth_ratio=cfg.bandwidth_ratio,
        transmit_power=cfg.raw["channel"]["transmit_power"],
        train_snr_db=tr["train_snr_db"],
        train_channel_mode=tr["train_channel_mode"],
        learning_rate=tr["learning_rate"],
        batch_size=tr["batch_size"],
        beta1=tr["beta1"],
        beta2=tr["beta2"],
        epsilon=tr["epsilon"],
        max_epochs=tr["max_epochs"],
        patience=tr["patience"],
        loss_weights=tr["loss_weights"] if loss_weights is None else loss_weights,
        seed=cfg.seed,
    )


def train(cfg: RunConfig, data: Optional[Data] = None, architecture: Optional[str] = None) -> Tuple[GAIMultiTaskEstimator, List[float]]:
    """Fit one model; returns the estimator and its per-step training loss."""
    data = data or make_data(cfg)
    est = make_estimator(cfg, architecture)
    est.fit(data.X_train, data.y_train, data.X_val, data.y_val)
    return est, list(est.loss_curve_)


# ---------------------------------------------------------------- sweeps


def _fmt(value: float) -> str:
    return repr(float(value))


def result_rows(
    records: Sequence[MetricRecord],
    run_id: str,
    variant: str,
    snr_db: float,
    ratio: float,
    mode: str,
    seed: int,
) -> List[dict]:
    return [
        {
            "run_id": run_id,
            "variant": variant,
            "task": r.task,
            "metric": r.metric,
            "direction": r.direction,
            "snr_db": _fmt(snr_db),
            "bandwidth_ratio": _fmt(ratio),
            "channel_mode": mode,
            "seed": str(seed),
            "value": _fmt(r.value),
        }
        for r in records
    ]


def write_results_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def evaluate_sweep(
    est: GAIMultiTaskEstimator,
    data: Data,
    snrs: Sequence[float] = (),
    ratios: Sequence[float] = (),
    modes: Sequence[str] = ("awgn",),
    eval_seed: int = 1_000_003,
    run_id: str = "run",
    variant: Optional[str] = None,
    rayleigh_scale: float = 0.2,
    adapter_epochs: int = 3,
) -> List[dict]:
    """Evaluate every task metric for each (ratio, mode, SNR) cell on the validation split.

    Every cell reuses ``eval_seed`` for its channel noise. A non-empty
    ``ratios`` list trains a fresh bandwidth adapter per ratio on the training
    split (everything else frozen); the model's own adapter is restored
    afterwards. ``"noiseless"`` mode ignores ``snrs`` and reports SNR ``inf``.
    """
    variant = variant or est.architecture
    model = est.model_
    native_cds = est.c_ds_
    native_adapter = params_snapshot(model.adapter) if model.adapter is not None else None
    _, h_out, w_out = est.encoder_.output_shape

    settings: List[Optional[int]] = [native_cds]
    if ratios:
        settings = [solve_cds(r, est.input_shape_, w_out, h_out)[0] for r in ratios]

    def restore_native() -> None:
        model.set_adapter(native_cds)
        est.c_ds_ = native_cds
        if native_adapter is not None:
            model.adapter.load_state_dict(native_adapter)

    rows: List[dict] = []
    try:
        for c_ds in settings:
            if c_ds == native_cds:
                restore_native()
            else:
                est.fit_adapter(data.X_train, data.y_train, c_ds, epochs=adapter_epochs)
            achieved = est.achieved_ratio_
            logger.info("bandwidth ratio %s (C_ds=%s)", achieved, c_ds)
            for mode in modes:
                points = [math.inf] if mode == "noiseless" else list(snrs)
                for snr in points:
                    ch = ChannelConfig(snr, est.transmit_power, mode, rayleigh_scale, eval_seed)
                    records = est.evaluate(data.X_val, data.y_val, ch, seed=eval_seed)
                    rows.extend(result_rows(records, run_id, variant, snr, float(achieved), mode, est.seed))
    finally:
        restore_native()
    return rows


# ---------------------------------------------------------------- ablation


@dataclass
class AblationResult:
    loss_weights: List[float]
    estimators: Dict[str, List[GAIMultiTaskEstimator]] = field(default_factory=dict)
    rows: Dict[str, List[dict]] = field(default_factory=dict)
    tables: Dict[str, Dict[str, Dict[str, float]]] = field(default_factory=dict)
    val_losses: Dict[str, float] = field(default_factory=dict)
    initial_val_losses: Dict[str, float] = field(default_factory=dict)
    deltas: Dict[str, Tuple[Dict[str, float], float]] = field(default_factory=dict)

    def delta_rows(self) -> List[dict]:
        out = []
        for variant, (per_task, overall) in self.deltas.items():
            for task, value in per_task.items():
                out.append({"variant": variant, "task": task, "delta": _fmt(value)})
            out.append({"variant": variant, "task": "overall", "delta": _fmt(overall)})
        return out


def _without_loss(table: Dict[str, Dict[str, float]]) -> Dict[str, Dict[str, float]]:
    return {t: {m: v for m, v in ms.items() if m != "loss"} for t, ms in table.items()}


def run_ablation(cfg: RunConfig, variants: Sequence[str] = ABLATION_VARIANTS, data: Optional[Data] = None) -> AblationResult:
    """Train each variant on the same data with the same budget and loss weights.

    ``single_task`` trains one last-block model per task. Loss weights come
    from the config, or (``"auto"``) from the full variant at initialisation,
    so validation totals are comparable across variants.
    """
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; expected a subset of {ABLATION_VARIANTS}")
    data = data or make_data(cfg)
    tasks = cfg.task_specs()
    weights = cfg.raw["train"]["loss_weights"]
    if weights == "auto":
        weights = make_estimator(cfg, "full").calibrate_loss_weights(data.X_train, data.y_train)
    result = AblationResult(loss_weights=list(weights))
    eval_ch = cfg.channel_config()
    eval_seed = cfg.raw["channel"]["seed"]

    for variant in variants:
        if variant == "single_task":
            ests = [make_estimator(cfg, "basic_multitask", [t], [w]) for t, w in zip(tasks, weights)]
        else:
            ests = [make_estimator(cfg, variant, loss_weights=weights)]
        records: List[MetricRecord] = []
        val, init = 0.0, 0.0
        for est in ests:
            est.fit(data.X_train, data.y_train, data.X_val, data.y_val)
            records.extend(est.evaluate(data.X_val, data.y_val, eval_ch, seed=eval_seed))
            val += est.best_val_loss_
            init += est.initial_val_loss_
        ratio = float(ests[0].achieved_ratio_)
        snr = eval_ch.snr_db if eval_ch.mode != "noiseless" else math.inf
        result.estimators[variant] = ests
        result.rows[variant] = result_rows(records, f"{variant}-seed{cfg.seed}", variant, snr, ratio, eval_ch.mode, cfg.seed)
        result.tables[variant] = records_to_table(records)
        result.val_losses[variant] = val
        result.initial_val_losses[variant] = init

    if "single_task" in result.tables:
        base = _without_loss(result.tables["single_task"])
        for variant, table in result.tables.items():
            if variant != "single_task":
                result.deltas[variant] = relative_improvement(_without_loss(table), base, skip_zero_baseline=True)
    return result


# ---------------------------------------------------------------- task-node weights


def export_task_node_weights(est: GAIMultiTaskEstimator, X, path=None) -> np.ndarray:
    """``T×N`` task-node weights; optionally written as ``task,node,weight`` CSV (nodes 1-based)."""
    matrix = est.task_node_weights(X)
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["task", "node", "weight"])
            for spec, row in zip(est.tasks_, matrix):
                for i, w in enumerate(row, start=1):
                    writer.writerow([spec.name, i, _fmt(w)])
    return matrix


# ---------------------------------------------------------------- complexity


def gai_flop_table(
    gai: GaiConfig,
    block_shapes: Sequence[tuple],
    out_size: Tuple[int, int],
    seed: int = 0,
) -> List[dict]:
    """Per-stage analytic vs counted multiplies for one sample through the GAI module."""
    module = GAIModule(gai, [s[0] for s in block_shapes], out_size, seed)
    rng = np.random.default_rng(seed)
    feats = [Tensor(rng.standard_normal((1,) + tuple(s))) for s in block_shapes]
    with no_grad(), FlopCounter() as counter:
        module.forward(feats)
    analytic = flop_count_gai(gai, block_shapes, out_size)
    extra = sorted(set(counter.counts) - set(analytic))
    rows = [
        {"stage": k, "analytic": v, "instrumented": int(counter.counts.get(k, 0))}
        for k, v in analytic.items()
    ]
    rows += [{"stage": k, "analytic": 0, "instrumented": int(counter.counts[k])} for k in extra]
    for r in rows:
        r["match"] = r["analytic"] == r["instrumented"]
    return rows


def flop_report(cfg: RunConfig) -> List[dict]:
    arch = cfg.raw["gai"]["architecture"]
    if arch == "basic_multitask":
        raise ValueError("basic_multitask has no GAI stages to count")
    enc: EncoderConfig = cfg.encoder_config()
    g = cfg.raw["gai"]
    gai = GaiConfig(
        num_nodes=enc.num_blocks,
        c_out=g["c_out"] or enc.channels[-1],
        num_tasks=len(cfg.task_specs()),
        iterations=g["iterations"],
        c_rm=g["c_rm"],
        leaky_slope=g["leaky_slope"],
        variant=arch,
        shared_attention_vector=g["shared_attention_vector"],
        normalize_task_weights=g["normalize_task_weights"],
    )
    _, h_out, w_out = enc.output_shape
    return gai_flop_table(gai, enc.block_shapes, (h_out, w_out), cfg.seed)


# ---------------------------------------------------------------- persistence


def save_estimator(est: GAIMultiTaskEstimator, cfg: RunConfig, path) -> None:
    meta = {
        "config": cfg.to_dict(),
        "architecture": est.architecture,
        "input_shape": list(est.input_shape_),
        "c_ds": est.c_ds_,
        "loss_weights": list(est.loss_weights_),
    }
    save_checkpoint(est.model_.state_dict(), path, meta)


def load_estimator(path) -> Tuple[GAIMultiTaskEstimator, RunConfig]:
    params, meta = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta["config"])
    est = make_estimator(cfg, meta["architecture"], loss_weights=meta["loss_weights"])
    est.initialize(meta["input_shape"])
    if meta["c_ds"] != est.c_ds_:
        est.model_.set_adapter(meta["c_ds"])
        est.c_ds_ = meta["c_ds"]
    est.model_.load_state_dict(params)
    est.loss_weights_ = list(meta["loss_weights"])
    return est, cfg


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
