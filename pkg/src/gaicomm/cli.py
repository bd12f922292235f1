"""Command-line front end: ``gaicomm {train,sweep,ablate,verify,flops,export-weights}``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from typing import List, Optional, Sequence

from . import harness, verify
from .checkpoint import CheckpointError
from .config import DEFAULTS, ConfigError, RunConfig
from .estimator import snr_grid

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2

SCHEMA_HELP = """config file (JSON); every key is optional, unknown keys are rejected.
defaults:
""" + json.dumps(DEFAULTS, indent=2) + """

encoder: preset resnet18|resnet34 scaled by width, or explicit channels/strides lists
gai.architecture: full | gai_w | simp_att | basic_multitask; c_out null = last block width
tasks[].kind: segmentation | depth | surface_normal | keypoint | edge | classification
channel.mode: noiseless | awgn | rayleigh; snr_db null = infinite
bandwidth.ratio: target k/n (null = no adapter); adapter_epochs for sweep re-fits
train.loss_weights: "auto" (inverse initial losses) or one weight per task
train.train_snr_db: null trains over a noiseless channel
"""


class UsageError(Exception):
    pass


def _parse_snr(text: str) -> List[float]:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
        return snr_grid(lo, hi, step)
    except ValueError:
        raise UsageError(f"--snr expects lo:hi:step with step > 0, got {text!r}") from None


def _parse_list(text: Optional[str]) -> List[str]:
    return [v.strip() for v in (text or "").split(",") if v.strip()]


def _load_config(path, seed: Optional[int] = None) -> RunConfig:
    cfg = RunConfig.from_file(path)
    if seed is not None:
        cfg = cfg.with_overrides(seed=seed)
    return cfg


def _write_rows(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_config(cfg: RunConfig, path) -> None:
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = harness.ensure_dir(args.out)
    est, curve = harness.train(cfg)
    harness.save_estimator(est, cfg, out / "model.gai1")
    _write_rows(out / "losses.csv", ["step", "train_loss"], [(i, repr(v)) for i, v in enumerate(curve)])
    _write_rows(
        out / "val_losses.csv",
        ["epoch", "val_loss"],
        [(0, repr(est.initial_val_loss_))] + [(i + 1, repr(v)) for i, v in enumerate(est.val_curve_)],
    )
    _write_config(cfg, out / "config.json")
    print(f"trained {est.n_epochs_} epochs; best validation loss {est.best_val_loss_:.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    snrs = _parse_snr(args.snr)
    try:
        ratios = [float(r) for r in _parse_list(args.ratios)]
    except ValueError:
        raise UsageError(f"--ratios expects a comma-separated list of numbers, got {args.ratios!r}") from None
    est, ckpt_cfg = harness.load_estimator(args.checkpoint)
    cfg = _load_config(args.config) if args.config else ckpt_cfg
    out = harness.ensure_dir(args.out)
    data = harness.make_data(cfg)
    ch = cfg.raw["channel"]
    rows = harness.evaluate_sweep(
        est,
        data,
        snrs,
        ratios,
        [args.mode],
        eval_seed=ch["seed"],
        run_id=args.run_id,
        rayleigh_scale=ch["rayleigh_scale"],
        adapter_epochs=cfg.raw["bandwidth"]["adapter_epochs"],
    )
    harness.write_results_csv(rows, out / "results.csv")
    for r in sorted({row["bandwidth_ratio"] for row in rows}, key=float):
        print(f"achieved bandwidth ratio {r}")
    print(f"{len(rows)} rows -> {out / 'results.csv'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    variants = _parse_list(args.variants)
    unknown = [v for v in variants if v not in harness.ABLATION_VARIANTS]
    if unknown or not variants:
        raise UsageError(f"unknown variants {unknown}; choose from {', '.join(harness.ABLATION_VARIANTS)}")
    cfg = _load_config(args.config, args.seed)
    out = harness.ensure_dir(args.out)
    result = harness.run_ablation(cfg, variants)
    for variant, rows in result.rows.items():
        harness.write_results_csv(rows, out / f"results_{variant}.csv")
    _write_rows(out / "delta_summary.csv", ["variant", "task", "delta"], [tuple(r.values()) for r in result.delta_rows()])
    _write_rows(
        out / "loss_summary.csv",
        ["variant", "initial_val_loss", "best_val_loss"],
        [(v, repr(result.initial_val_losses[v]), repr(result.val_losses[v])) for v in result.val_losses],
    )
    _write_config(cfg, out / "config.json")
    for variant, (_, overall) in result.deltas.items():
        print(f"{variant}: delta {overall:+.3f}%")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_checks(inject_fault=args.inject_fault, report=print)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_flops(args) -> int:
    cfg = _load_config(args.config)
    out = harness.ensure_dir(args.out)
    rows = harness.flop_report(cfg)
    _write_rows(
        out / "flops.csv",
        ["stage", "analytic", "instrumented", "match"],
        [(r["stage"], r["analytic"], r["instrumented"], str(r["match"]).lower()) for r in rows],
    )
    for r in rows:
        print(f"{r['stage']:<18} {r['analytic']:>14} {r['instrumented']:>14} {'ok' if r['match'] else 'MISMATCH'}")
    return EXIT_OK if all(r["match"] for r in rows) else EXIT_VERIFY


def cmd_export_weights(args) -> int:
    est, cfg = harness.load_estimator(args.checkpoint)
    out = harness.ensure_dir(args.out)
    data = harness.make_data(cfg)
    harness.export_task_node_weights(est, data.X_val[: args.samples], out / "task_node_weights.csv")
    print(f"wrote {out / 'task_node_weights.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="gaicomm",
        description="Multi-task semantic communication with graph attention over encoder blocks.",
        epilog=SCHEMA_HELP,
        formatter_class=fmt,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model", epilog=SCHEMA_HELP, formatter_class=fmt)
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="evaluate a checkpoint over SNR and bandwidth ratios")
    p.add_argument("--checkpoint", required=True, help="model.gai1 written by train")
    p.add_argument("--config", default=None, help="config for data and channel (default: the one stored in the checkpoint)")
    p.add_argument("--snr", default="-2:14:2", help="SNR grid lo:hi:step in dB (default: -2:14:2)")
    p.add_argument("--ratios", default="", help="comma-separated target ratios k/n; empty keeps the native ratio")
    p.add_argument("--mode", choices=("awgn", "rayleigh", "noiseless"), default="awgn", help="channel model (default: awgn)")
    p.add_argument("--run-id", default="sweep", help="run_id column value (default: sweep)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="train and compare architecture variants", epilog=SCHEMA_HELP, formatter_class=fmt)
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument(
        "--variants",
        default=",".join(harness.ABLATION_VARIANTS),
        help="comma-separated subset of " + ",".join(harness.ABLATION_VARIANTS) + " (default: all)",
    )
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="run gradient, oracle and invariant checks")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("flops", help="analytic vs counted multiplies per GAI stage")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("export-weights", help="write the task-node weight matrix of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="model.gai1 written by train")
    p.add_argument("--samples", type=int, default=16, help="validation images to average over (default: 16)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export_weights)
    return parser


def _glue_negative_values(argv: Sequence[str]) -> List[str]:
    # lets "--snr -2:14:2" through argparse, which would read "-2:14:2" as an option
    out, it = [], iter(argv)
    for tok in it:
        if tok == "--snr":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--snr={nxt}")
        else:
            out.append(tok)
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_glue_negative_values(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"gaicomm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
