"""End-to-end link: encoder, optional GAI fusion, channel, task decoders."""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .channel import BandwidthAdapter, Channel, power_normalize
from .encoder import EncoderConfig, ResNetEncoder
from .gai import GAIModule, GaiConfig
from .heads import TaskDecoder, TaskSpec
from .nn import Module, child_rng

ARCHITECTURES = ("full", "gai_w", "simp_att", "basic_multitask")


class MultiTaskLink(Module):
    """Shared encoder feeding ``T`` decoders over a simulated channel.

    With ``gai=None`` the last block output is transmitted once and shared by
    every decoder; otherwise each task gets its own fused feature ``z_t`` and
    its own channel realisation.
    """

    def __init__(
        self,
        encoder: EncoderConfig,
        tasks: Sequence[TaskSpec],
        gai: Optional[GaiConfig] = None,
        decoder_hidden: int = 64,
        c_ds: Optional[int] = None,
        seed: int = 0,
    ) -> None:
        self._encoder_config = encoder
        self._tasks = list(tasks)
        self._seed = seed
        self.encoder = ResNetEncoder(encoder, child_rng(seed, 1))
        _, h_out, w_out = encoder.output_shape
        self.gai: Optional[GAIModule] = None
        if gai is not None:
            if gai.num_tasks != len(self._tasks):
                raise ValueError("GaiConfig.num_tasks must equal the number of task specs")
            self.gai = GAIModule(gai, encoder.channels, (h_out, w_out), seed)
        self._c_tx = gai.c_out if gai is not None else encoder.channels[-1]
        self.adapter: Optional[BandwidthAdapter] = None
        if c_ds is not None:
            self.set_adapter(c_ds)
        self.decoders = [
            TaskDecoder(child_rng(seed, 4, t), spec, self._c_tx, decoder_hidden)
            for t, spec in enumerate(self._tasks)
        ]

    @property
    def tasks(self) -> List[TaskSpec]:
        return self._tasks

    @property
    def c_tx(self) -> int:
        """Channels of the feature handed to the channel (after any down-projection)."""
        return self.adapter.c_ds if self.adapter is not None else self._c_tx

    def set_adapter(self, c_ds: Optional[int]) -> None:
        if c_ds is None:
            self.adapter = None
        else:
            self.adapter = BandwidthAdapter(child_rng(self._seed, 3, c_ds), self._c_tx, c_ds)

    def features(self, x: Tensor) -> Dict[str, object]:
        """Encoder (and GAI) pass; ``z`` holds one feature per task, or one shared feature."""
        blocks = self.encoder(x)
        if self.gai is None:
            return {"blocks": blocks, "z": [blocks[-1]]}
        out = self.gai.forward(blocks)
        out["blocks"] = blocks
        return out

    def transmit(self, z: Tensor, channel: Optional[Channel], transmit_power: float) -> Dict[str, Tensor]:
        s = self.adapter.down(z) if self.adapter is not None else z
        s = power_normalize(s, transmit_power)
        received = channel(s) if channel is not None else s
        r = self.adapter.up(received) if self.adapter is not None else received
        return {"tx": s, "rx": r}

    def __call__(self, x: Tensor, channel: Optional[Channel] = None, transmit_power: float = 1.0) -> Dict[str, object]:
        return self.forward(x, channel, transmit_power)

    def forward(self, x: Tensor, channel: Optional[Channel] = None, transmit_power: float = 1.0) -> Dict[str, object]:
        feats = self.features(x)
        links = [self.transmit(z, channel, transmit_power) for z in feats["z"]]
        out_size = tuple(x.shape[-2:])
        preds = []
        for t, dec in enumerate(self.decoders):
            link = links[t] if len(links) > 1 else links[0]
            preds.append(dec(link["rx"], out_size))
        feats["tx"] = [link["tx"] for link in links]
        feats["preds"] = preds
        return feats


def build_link(
    encoder: EncoderConfig,
    tasks: Sequence[TaskSpec],
    architecture: str = "full",
    c_out: Optional[int] = None,
    iterations: int = 1,
    c_rm: int = 256,
    leaky_slope: float = 0.2,
    normalize_task_weights: bool = False,
    shared_attention_vector: bool = True,
    decoder_hidden: int = 64,
    c_ds: Optional[int] = None,
    seed: int = 0,
) -> MultiTaskLink:
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}; expected one of {ARCHITECTURES}")
    gai = None
    if architecture != "basic_multitask":
        gai = GaiConfig(
            num_nodes=encoder.num_blocks,
            c_out=c_out or encoder.channels[-1],
            num_tasks=len(tasks),
            iterations=iterations,
            c_rm=c_rm,
            leaky_slope=leaky_slope,
            variant=architecture,
            shared_attention_vector=shared_attention_vector,
            normalize_task_weights=normalize_task_weights,
        )
    return MultiTaskLink(encoder, tasks, gai, decoder_hidden, c_ds, seed)


def params_snapshot(module: Module) -> Dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in module.named_parameters()}
