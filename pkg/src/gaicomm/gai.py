"""Graph Attention Inter-block (GAI) fusion of encoder block features.

Each encoder block output becomes a node of a fully connected graph. The
pipeline is

1. feature transform: 1×1 conv to ``c_out`` channels, global-average-pooled
   into the initial node vector and bilinearly resized into ``K_i``;
2. ``iterations`` rounds of single-head graph attention over the nodes;
3. relation mapping: a per-(task, node) two-layer MLP giving a channel weight
   vector ``e[t][i]``;
4. fusion: ``z_t = sum_i e[t][i] * K_i`` (channel-wise).

Node states are tensors of shape ``(..., N, c_out)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .autodiff import (
    Tensor,
    bilinear_resize,
    broadcast_to,
    concat,
    conv2d,
    flop_stage,
    global_avg_pool,
    leaky_relu,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    stack,
    transpose,
)
from .nn import Linear, Module, child_rng, glorot_uniform, near_identity, zeros

VARIANTS = ("full", "gai_w", "simp_att")


@dataclass
class GaiConfig:
    num_nodes: int
    c_out: int
    num_tasks: int
    iterations: int = 1
    c_rm: int = 256
    leaky_slope: float = 0.2
    variant: str = "full"
    shared_attention_vector: bool = True
    normalize_task_weights: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown GAI variant {self.variant!r}; expected one of {VARIANTS}")
        if min(self.num_nodes, self.num_tasks, self.c_out, self.c_rm) < 1:
            raise ValueError("num_nodes, num_tasks, c_out and c_rm must be >= 1")
        if self.iterations < 1 and self.variant != "gai_w":
            raise ValueError("iterations must be >= 1")


# ---------------------------------------------------------------- pure stage functions


def feature_transform(
    features: Sequence[Tensor],
    weights: Sequence[Tensor],
    biases: Sequence[Tensor],
    out_size: Tuple[int, int],
) -> Tuple[Tensor, List[Tensor]]:
    """Unify block features into node vectors ``V0`` and resized maps ``K``.

    Returns ``V0`` with shape ``(..., N, c_out)`` and a list of ``N`` tensors of
    shape ``(..., c_out, H_out, W_out)``.
    """
    if not (len(features) == len(weights) == len(biases)):
        raise ValueError("feature_transform: one 1×1 conv per block feature is required")
    nodes, maps = [], []
    for f, q, b in zip(features, weights, biases):
        if f.shape[-3] != q.shape[1]:
            raise ValueError(f"feature has {f.shape[-3]} channels, transform expects {q.shape[1]}")
        with flop_stage("feature_conv"):
            unified = conv2d(f, q, b)
        nodes.append(global_avg_pool(unified))
        with flop_stage("interpolation"):
            maps.append(bilinear_resize(unified, *out_size))
    return stack(nodes, axis=-2), maps


def attention_coefficients(
    v: Tensor, u: Tensor, a: Tensor, leaky_slope: float = 0.2
) -> Tensor:
    """Row-stochastic ``(..., N, N)`` matrix of attention weights ``a_ij``."""
    n, c = v.shape[-2:]
    with flop_stage("gat_transform"):
        uv = matmul(v, transpose(u))
    lead = uv.shape[:-2]
    left = broadcast_to(reshape(uv, lead + (n, 1, c)), lead + (n, n, c))
    right = broadcast_to(reshape(uv, lead + (1, n, c)), lead + (n, n, c))
    with flop_stage("gat_logits"):
        logits = matmul(concat([left, right], axis=-1), a)
    return softmax(leaky_relu(logits, leaky_slope))


def graph_attention_step(
    v: Tensor, u: Tensor, p: Tensor, a: Tensor, leaky_slope: float = 0.2
) -> Tuple[Tensor, Tensor]:
    """One attention update over the fully connected graph (self-loops included).

    Returns the new node states and the attention matrix used.
    """
    if a.shape != (2 * v.shape[-1],):
        raise ValueError(f"attention vector must have {2 * v.shape[-1]} entries, got {a.shape}")
    attn = attention_coefficients(v, u, a, leaky_slope)
    with flop_stage("gat_transform"):
        pv = matmul(v, transpose(p))
    with flop_stage("gat_aggregate"):
        agg = matmul(attn, pv)
    return relu(agg), attn


def simp_att_step(v: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor) -> Tuple[Tensor, Tensor]:
    """Scaled dot-product self-attention over node vectors (no output ReLU)."""
    c = v.shape[-1]
    with flop_stage("simp_att"):
        q = matmul(v, transpose(w_q))
        k = matmul(v, transpose(w_k))
        val = matmul(v, transpose(w_v))
        nd = k.ndim
        axes = tuple(range(nd - 2)) + (nd - 1, nd - 2)
        scores = scale(matmul(q, transpose(k, axes)), 1.0 / np.sqrt(c))
        attn = softmax(scores)
        out = matmul(attn, val)
    return out, attn


def relation_mapping(
    v: Tensor, layers: Sequence[Sequence["RelationMLP"]], normalize: bool = False
) -> List[List[Tensor]]:
    """Task-node weights ``e[t][i] = L2(ReLU(L1(v_i)))``, each of shape ``(..., c_out)``.

    With ``normalize`` the weights are additionally softmaxed across nodes per
    channel; by default they are left as produced by the MLP.
    """
    n = v.shape[-2]
    if any(len(row) != n for row in layers):
        raise ValueError(f"relation mapping needs {n} layers per task")
    e = []
    with flop_stage("relation_mapping"):
        for row in layers:
            e.append([mlp(v[..., i, :]) for i, mlp in enumerate(row)])
    if normalize:
        e = [_softmax_over_nodes(row) for row in e]
    return e


def _softmax_over_nodes(row: List[Tensor]) -> List[Tensor]:
    stacked = stack(row, axis=-1)  # (..., C, N)
    weights = softmax(stacked)
    return [weights[..., i] for i in range(len(row))]


def fuse_task_feature(e_t: Sequence[Tensor], maps: Sequence[Tensor]) -> Tensor:
    """``z_t = sum_i e_t[i] ⊙ K_i`` with ``e_t[i]`` broadcast over space."""
    if len(e_t) != len(maps):
        raise ValueError("fuse_task_feature: weights and maps cover different node counts")
    z = None
    with flop_stage("fusion"):
        for e, k in zip(e_t, maps):
            term = reshape(e, e.shape + (1, 1)) * k
            z = term if z is None else z + term
    return z


# ---------------------------------------------------------------- parameters


class RelationMLP(Module):
    def __init__(self, rng: np.random.Generator, c_out: int, c_rm: int) -> None:
        self.fc1 = Linear(rng, c_out, c_rm)
        self.fc2 = Linear(rng, c_rm, c_out)

    def __call__(self, v: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(v)))


class GAIModule(Module):
    """Learnable parameters of the GAI stages plus the composed forward pass.

    Every parameter family is drawn from its own generator derived from
    ``seed``, so two modules that differ only in ``variant`` share all weights.
    """

    def __init__(
        self,
        config: GaiConfig,
        block_channels: Sequence[int],
        out_size: Tuple[int, int],
        seed: int = 0,
    ) -> None:
        if len(block_channels) != config.num_nodes:
            raise ValueError(
                f"{len(block_channels)} block features for num_nodes={config.num_nodes}"
            )
        self._config = config
        self._out_size = tuple(out_size)
        c = config.c_out
        rng = child_rng(seed, 10)
        self.transform_weight = [
            glorot_uniform(rng, (c, ci, 1, 1), ci, c) for ci in block_channels
        ]
        self.transform_bias = [zeros(c) for _ in block_channels]

        rng = child_rng(seed, 11)
        m = max(config.iterations, 1)
        self.gat_u = [near_identity(rng, c) for _ in range(m)]
        self.gat_p = [near_identity(rng, c) for _ in range(m)]
        n_vec = 1 if config.shared_attention_vector else m
        self.gat_a = [zeros(2 * c) for _ in range(n_vec)]

        rng = child_rng(seed, 12)
        self.att_q = glorot_uniform(rng, (c, c), c, c)
        self.att_k = glorot_uniform(rng, (c, c), c, c)
        self.att_v = near_identity(rng, c)

        rng = child_rng(seed, 13)
        self.relation = [
            [RelationMLP(rng, c, config.c_rm) for _ in range(config.num_nodes)]
            for _ in range(config.num_tasks)
        ]

    @property
    def config(self) -> GaiConfig:
        return self._config

    def attention_vector(self, m: int) -> Tensor:
        return self.gat_a[0] if self._config.shared_attention_vector else self.gat_a[m]

    def node_states(self, features: Sequence[Tensor]) -> Tuple[Tensor, List[Tensor]]:
        return feature_transform(
            features, self.transform_weight, self.transform_bias, self._out_size
        )

    def run_attention(self, v0: Tensor, keep: list = None) -> Tensor:
        """Apply the configured node-update stage; ``keep`` collects attention matrices."""
        cfg = self._config
        if cfg.variant == "gai_w":
            return v0
        v = v0
        for m in range(cfg.iterations):
            if cfg.variant == "full":
                v, attn = graph_attention_step(
                    v, self.gat_u[m], self.gat_p[m], self.attention_vector(m), cfg.leaky_slope
                )
            else:
                v, attn = simp_att_step(v, self.att_q, self.att_k, self.att_v)
            if keep is not None:
                keep.append(attn)
        return v

    def task_weights(self, v: Tensor) -> List[List[Tensor]]:
        return relation_mapping(v, self.relation, self._config.normalize_task_weights)

    def __call__(self, features: Sequence[Tensor]) -> List[Tensor]:
        return self.forward(features)["z"]

    def forward(self, features: Sequence[Tensor]) -> Dict[str, object]:
        """Full pass; returns ``z`` (one tensor per task) and the intermediates."""
        v0, maps = self.node_states(features)
        attn: list = []
        v = self.run_attention(v0, attn)
        e = self.task_weights(v)
        z = [fuse_task_feature(e_t, maps) for e_t in e]
        return {"z": z, "v0": v0, "v": v, "e": e, "K": maps, "attention": attn}


def graph_attention_run(v0: Tensor, module: GAIModule) -> Tensor:
    return module.run_attention(v0)


def gai_forward(features: Sequence[Tensor], module: GAIModule) -> List[Tensor]:
    return module(features)


# ---------------------------------------------------------------- complexity


def flop_count_gai(
    config: GaiConfig, block_shapes: Sequence[tuple], out_size: Tuple[int, int]
) -> Dict[str, int]:
    """Analytic per-sample multiply counts for each GAI stage.

    ``block_shapes`` lists ``(C_i, H_i, W_i)`` per node; ``out_size`` is
    ``(H_out, W_out)``.
    """
    n, t, c, m = config.num_nodes, config.num_tasks, config.c_out, config.iterations
    h_out, w_out = out_size
    counts = {
        "feature_conv": sum(c * h * w * ci for ci, h, w in block_shapes),
        "interpolation": 9 * n * c * h_out * w_out,
        "gat_transform": 0,
        "gat_logits": 0,
        "gat_aggregate": 0,
        "simp_att": 0,
        "relation_mapping": 2 * n * t * c * config.c_rm,
        "fusion": n * t * c * h_out * w_out,
    }
    if config.variant == "full":
        counts["gat_transform"] = 2 * m * n * c * c
        counts["gat_logits"] = m * n * n * 2 * c
        counts["gat_aggregate"] = m * n * n * c
    elif config.variant == "simp_att":
        counts["simp_att"] = m * (3 * n * c * c + 2 * n * n * c)
    return counts
