"""Residual-block encoder whose per-block outputs feed the GAI module."""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import List, Optional

import numpy as np

from .autodiff import Tensor, relu
from .nn import Conv2d, Module

RESNET18_CHANNELS = (64, 64, 128, 128, 256, 256, 512, 512)
RESNET18_STRIDES = (1, 1, 2, 1, 2, 1, 2, 1)


@dataclass
class EncoderConfig:
    """Block layout of the shared encoder.

    ``channels[i]`` and ``strides[i]`` describe block ``i``; block 0 reads the
    image directly (the usual 7×7 stem is folded into it).
    """

    in_channels: int = 3
    input_size: tuple = (32, 32)
    channels: tuple = RESNET18_CHANNELS
    strides: tuple = RESNET18_STRIDES

    def __post_init__(self) -> None:
        self.input_size = tuple(int(v) for v in self.input_size)
        self.channels = tuple(int(v) for v in self.channels)
        self.strides = tuple(int(v) for v in self.strides)
        self.validate()

    def validate(self) -> None:
        if len(self.channels) != len(self.strides) or not self.channels:
            raise ValueError("channels and strides must be non-empty and equally long")
        if min(self.channels) < 1 or min(self.strides) < 1 or self.in_channels < 1:
            raise ValueError("channel counts and strides must be positive")
        h, w = self.input_size
        if h % self.alpha or w % self.alpha:
            raise ValueError(f"input size {self.input_size} not divisible by alpha={self.alpha}")

    @property
    def num_blocks(self) -> int:
        return len(self.channels)

    @property
    def alpha(self) -> int:
        return prod(self.strides)

    @property
    def output_shape(self) -> tuple:
        h, w = self.input_size
        return (self.channels[-1], h // self.alpha, w // self.alpha)

    @property
    def block_shapes(self) -> List[tuple]:
        """``(C_i, H_i, W_i)`` for every block output."""
        h, w = self.input_size
        shapes = []
        for c, s in zip(self.channels, self.strides):
            h, w = h // s, w // s
            shapes.append((c, h, w))
        return shapes

    @classmethod
    def resnet18(cls, input_size=(32, 32), width: float = 1.0) -> "EncoderConfig":
        chans = tuple(max(1, int(round(c * width))) for c in RESNET18_CHANNELS)
        return cls(3, tuple(input_size), chans, RESNET18_STRIDES)

    @classmethod
    def resnet34(cls, input_size=(32, 32), width: float = 1.0) -> "EncoderConfig":
        layout = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)]
        chans, strides = [], []
        for c, reps, s in layout:
            for r in range(reps):
                chans.append(max(1, int(round(c * width))))
                strides.append(s if r == 0 else 1)
        return cls(3, tuple(input_size), tuple(chans), tuple(strides))


class ResidualBlock(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, stride: int) -> None:
        self.conv1 = Conv2d(rng, c_in, c_out, 3, stride=stride, padding=1)
        self.conv2 = Conv2d(rng, c_out, c_out, 3, stride=1, padding=1)
        self.proj: Optional[Conv2d] = None
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(rng, c_in, c_out, 1, stride=stride)
        self._c_in = c_in

    def __call__(self, x: Tensor) -> Tensor:
        return residual_block_forward(x, self)


def residual_block_forward(x: Tensor, block: ResidualBlock) -> Tensor:
    """``ReLU(conv2(ReLU(conv1(x))) + shortcut(x))``."""
    if x.shape[-3] != block._c_in:
        raise ValueError(f"block expects {block._c_in} channels, got {x.shape[-3]}")
    shortcut = x if block.proj is None else block.proj(x)
    return relu(block.conv2(relu(block.conv1(x))) + shortcut)


class ResNetEncoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator) -> None:
        self._config = config
        c_in = config.in_channels
        self.blocks = []
        for c, s in zip(config.channels, config.strides):
            self.blocks.append(ResidualBlock(rng, c_in, c, s))
            c_in = c

    @property
    def config(self) -> EncoderConfig:
        return self._config

    def __call__(self, x: Tensor) -> List[Tensor]:
        return encode_collect(x, self.blocks)


def encode_collect(x: Tensor, blocks) -> List[Tensor]:
    """Run the blocks in sequence and keep every block output ``F_1..F_N``."""
    features = []
    for block in blocks:
        x = block(x)
        features.append(x)
    return features
