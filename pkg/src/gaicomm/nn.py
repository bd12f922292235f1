"""Parameter containers and initialisers shared by every network component."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor, conv2d, linear


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def near_identity(rng: np.random.Generator, size: int, noise: float = 0.01) -> Tensor:
    return Tensor(np.eye(size) + rng.uniform(-noise, noise, size=(size, size)), requires_grad=True)


class Module:
    """Walks attributes in definition order to enumerate trainable tensors."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
    ) -> None:
        self.weight = glorot_uniform(
            rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel, c_out * kernel * kernel
        )
        self.bias = zeros(c_out)
        self._stride = stride
        self._padding = padding
        self._dilation = dilation

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self._stride, self._padding, self._dilation)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int) -> None:
        self.weight = glorot_uniform(rng, (d_out, d_in), d_in, d_out)
        self.bias = zeros(d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def child_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for one component, so variants share unrelated weights."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *path]))
