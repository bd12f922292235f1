"""Self-checks run by ``gaicomm verify``: gradients, attention oracle and invariants."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward_fault, no_grad
from .channel import Channel, ChannelConfig, bandwidth_ratio, power_normalize
from .encoder import EncoderConfig
from .gai import GaiConfig, graph_attention_step
from .harness import gai_flop_table
from .heads import TaskSpec, task_loss, total_loss
from .model import build_link


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} measured={self.measured:.3e}  tol={self.tolerance:.1e}  ({self.seconds:.1f}s)"


# ---------------------------------------------------------------- oracles


def gat_step_oracle(v, u, p, a, slope: float = 0.2):
    """Scalar-loop reference for one graph-attention update on an ``N×C`` node matrix."""
    v, u, p, a = (np.asarray(x, dtype=float).tolist() for x in (v, u, p, a))
    n, c = len(v), len(v[0])
    uv = [[sum(u[r][k] * v[i][k] for k in range(c)) for r in range(c)] for i in range(n)]
    pv = [[sum(p[r][k] * v[i][k] for k in range(c)) for r in range(c)] for i in range(n)]
    attn = []
    for i in range(n):
        logits = []
        for j in range(n):
            s = sum(a[k] * uv[i][k] for k in range(c)) + sum(a[c + k] * uv[j][k] for k in range(c))
            logits.append(s if s > 0 else slope * s)
        top = max(logits)
        ex = [math.exp(s - top) for s in logits]
        total = sum(ex)
        attn.append([x / total for x in ex])
    out = [
        [max(0.0, sum(attn[i][j] * pv[j][r] for j in range(n))) for r in range(c)]
        for i in range(n)
    ]
    return np.array(out), np.array(attn)


def random_gat_case(rng: np.random.Generator, zero_attention: bool = False):
    n = int(rng.integers(1, 5))
    c = int(rng.integers(1, 4))
    v = rng.standard_normal((n, c))
    u = rng.standard_normal((c, c))
    p = rng.standard_normal((c, c))
    a = np.zeros(2 * c) if zero_attention else rng.standard_normal(2 * c)
    return v, u, p, a


# ---------------------------------------------------------------- tiny end-to-end model


def tiny_pipeline(seed: int = 0):
    """N=4 blocks, C_out=8, T=2 on 3×16×16 inputs, plus a fixed batch and loss closure."""
    enc = EncoderConfig(3, (16, 16), channels=(4, 4, 8, 8), strides=(1, 2, 1, 2))
    tasks = [TaskSpec("segmentation", num_classes=3), TaskSpec("depth")]
    link = build_link(enc, tasks, "full", c_out=8, c_rm=8, decoder_hidden=8, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (2, 3, 16, 16))
    seg = rng.integers(0, 3, (2, 16, 16))
    depth = rng.uniform(1, 3, (2, 1, 16, 16))
    # break the zero-initialised attention vector so its gradient path is exercised
    link.gai.gat_a[0].data = rng.standard_normal(link.gai.gat_a[0].shape) * 0.1
    channel = Channel(ChannelConfig(mode="noiseless"), seed=0)

    def loss_fn(inp: Tensor) -> Tensor:
        out = link(inp, channel)
        losses = [task_loss(out["preds"][0], seg, tasks[0]), task_loss(out["preds"][1], depth, tasks[1])]
        return total_loss(losses, [1.0, 0.5])

    return link, x, loss_fn


def _stable_central_difference(f: Callable[[float], float], steps: Sequence[float], rtol: float = 1e-6) -> float:
    """Central difference at the first step that agrees with the next smaller one.

    A ReLU kink inside ``[x - h, x + h]`` spoils the estimate for that ``h``
    only, so shrinking until two successive estimates agree skips it.
    """
    prev = None
    for h in steps:
        est = (f(h) - f(-h)) / (2 * h)
        if prev is not None and abs(prev - est) <= rtol * max(1.0, abs(prev), abs(est)):
            return prev
        prev = est
    return prev


def pipeline_grad_error(seed: int = 0, per_tensor: int = 3, steps: Sequence[float] = (1e-5, 1e-6, 1e-7)) -> float:
    """Worst ``|a-n|/max(1,|a|,|n|)`` over sampled coordinates of every parameter and the input."""
    link, x, loss_fn = tiny_pipeline(seed)
    rng = np.random.default_rng([seed, 99])
    xt = Tensor(x, requires_grad=True)
    loss_fn(xt).backward()
    targets = [("input", xt)] + list(link.named_parameters())
    worst = 0.0
    for _, t in targets:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False):
            orig = flat[i]

            def shifted(h: float) -> float:
                flat[i] = orig + h
                with no_grad():
                    value = loss_fn(Tensor(xt.data)).item()
                flat[i] = orig
                return value

            numeric = _stable_central_difference(shifted, steps)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst


# ---------------------------------------------------------------- checks


def check_composite_grad() -> float:
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 2, 3, 3))
    lin = rng.standard_normal((4, 5))

    def f(x: Tensor) -> Tensor:
        h = ad.relu(ad.conv2d(x, Tensor(w), padding=1))
        pooled = ad.global_avg_pool(ad.bilinear_resize(h, 7, 5))
        return ad.tsum(ad.log_softmax(ad.matmul(pooled, Tensor(lin)), axis=-1) * -1.0)

    return ad.grad_check(f, rng.standard_normal((2, 2, 6, 6)))


def check_gat_oracle(cases: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(cases):
        v, u, p, a = random_gat_case(rng, zero_attention=(k % 10 == 0))
        got, attn = graph_attention_step(Tensor(v), Tensor(u), Tensor(p), Tensor(a))
        ref, ref_attn = gat_step_oracle(v, u, p, a)
        worst = max(worst, float(np.max(np.abs(got.data - ref))), float(np.max(np.abs(attn.data - ref_attn))))
    return worst


def check_attention_rows(draws: int = 1000, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        n, c = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        v = Tensor(rng.standard_normal((n, c)))
        a = Tensor(rng.standard_normal(2 * c))
        for _ in range(2):
            v, attn = graph_attention_step(v, Tensor(rng.standard_normal((c, c))), Tensor(rng.standard_normal((c, c))), a)
            worst = max(worst, float(np.max(np.abs(attn.data.sum(axis=-1) - 1.0))))
    return worst


def check_snr_calibration(samples: int = 1_000_000, seed: int = 5) -> float:
    z = Tensor(np.random.default_rng(seed).standard_normal((1, samples)))
    z = power_normalize(z, 1.0)
    worst = 0.0
    for k, snr in enumerate((-2.0, 0.0, 6.0, 10.0, 14.0)):
        ch = Channel(ChannelConfig(snr, 1.0, "awgn"), seed=seed + k)
        noise = ch(z).data - z.data
        measured = 10 * math.log10(1.0 / float(np.mean(noise**2)))
        worst = max(worst, abs(measured - snr))
    return worst


def check_rayleigh_noiseless(seed: int = 6) -> float:
    z = Tensor(np.random.default_rng(seed).standard_normal((4, 8, 3, 3)))
    ch = Channel(ChannelConfig(math.inf, 1.0, "rayleigh"), seed=seed)
    return float(np.max(np.abs(ch(z).data - z.data)))


def check_bandwidth_ratio() -> float:
    _, _, r = bandwidth_ratio((3, 224, 224), (512, 7, 7))
    return 0.0 if r == Fraction(1, 12) else float(abs(r - Fraction(1, 12)))


def check_flops() -> float:
    worst = 0
    shapes4 = [(64, 32, 32), (128, 16, 16), (256, 8, 8), (512, 4, 4)]
    shapes8 = [(64, 32, 32), (64, 32, 32), (128, 16, 16), (128, 16, 16), (256, 8, 8), (256, 8, 8), (512, 4, 4), (512, 4, 4)]
    for shapes in (shapes4, shapes8):
        for c_out in (64, 512):
            for t in (1, 3):
                cfg = GaiConfig(len(shapes), c_out, t, c_rm=256)
                for row in gai_flop_table(cfg, shapes, (4, 4)):
                    worst = max(worst, abs(row["analytic"] - row["instrumented"]))
    return float(worst)


def check_resize_identity(seed: int = 7) -> float:
    x = np.random.default_rng(seed).standard_normal((2, 3, 5, 7))
    same = ad.bilinear_resize(Tensor(x), 5, 7).data
    const = ad.bilinear_resize(Tensor(np.full((1, 2, 3, 3), 2.5)), 8, 6).data
    return float(max(np.max(np.abs(same - x)), np.max(np.abs(const - 2.5))))


CHECKS: List[tuple] = [
    ("grad.composite", check_composite_grad, 1e-6),
    ("grad.pipeline", pipeline_grad_error, 1e-4),
    ("gat.oracle", check_gat_oracle, 1e-12),
    ("attention.row_sums", check_attention_rows, 1e-12),
    ("channel.snr_db", check_snr_calibration, 0.1),
    ("channel.rayleigh_noiseless", check_rayleigh_noiseless, 0.0),
    ("bandwidth.ratio_1_12", check_bandwidth_ratio, 0.0),
    ("flops.gai_stages", check_flops, 0.0),
    ("resize.identity_constant", check_resize_identity, 0.0),
]

_FAULT_CHECKS = ("grad.composite", "grad.pipeline")


def run_checks(
    inject_fault: bool = False,
    only: Optional[Sequence[str]] = None,
    report: Optional[Callable[[str], None]] = None,
) -> List[CheckResult]:
    """Run every check (or those named in ``only``).

    ``inject_fault`` perturbs every leaf gradient during the gradient checks,
    which must then fail.
    """
    results = []
    for name, fn, tol in CHECKS:
        if only is not None and name not in only:
            continue
        start = time.perf_counter()
        if inject_fault and name in _FAULT_CHECKS:
            with backward_fault(lambda g: g * 1.01 + 1e-3):
                measured = fn()
        else:
            measured = fn()
        res = CheckResult(name, float(measured), tol, bool(measured <= tol), time.perf_counter() - start)
        results.append(res)
        if report is not None:
            report(res.line())
    return results
