"""Power normalisation, AWGN / Rayleigh transmission and bandwidth accounting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np

from .autodiff import Tensor, maximum, power, tsum
from .nn import Conv2d, Module

logger = logging.getLogger(__name__)

MODES = ("noiseless", "awgn", "rayleigh")
_H_FLOOR = 1e-6


@dataclass
class ChannelConfig:
    snr_db: float = math.inf
    transmit_power: float = 1.0
    mode: str = "noiseless"
    rayleigh_scale: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown channel mode {self.mode!r}; expected one of {MODES}")
        if self.transmit_power <= 0:
            raise ValueError("transmit_power must be positive")
        if self.mode == "rayleigh" and self.rayleigh_scale <= 0:
            raise ValueError("rayleigh_scale must be positive")

    @property
    def noise_variance(self) -> float:
        if self.mode == "noiseless" or self.snr_db == math.inf:
            return 0.0
        return self.transmit_power * 10.0 ** (-self.snr_db / 10.0)


def bandwidth_ratio(input_shape: Tuple[int, ...], tx_shape: Tuple[int, ...]) -> Tuple[int, Fraction, Fraction]:
    """``(n, k, R)`` with ``n`` source pixels, ``k`` complex channel uses and ``R = k/n``.

    ``k`` and ``R`` are exact fractions (``k`` is half the real-valued symbol count).
    """
    if not input_shape or not tx_shape or min(input_shape) < 1 or min(tx_shape) < 1:
        raise ValueError("bandwidth_ratio: all extents must be positive")
    n = math.prod(input_shape)
    k = Fraction(math.prod(tx_shape), 2)
    return n, k, k / n


def solve_cds(target_ratio: float, input_shape: Tuple[int, ...], w_out: int, h_out: int) -> Tuple[int, Fraction]:
    """Channel count ``C_ds`` whose transmission hits ``target_ratio`` as closely as possible."""
    if target_ratio <= 0:
        raise ValueError("target bandwidth ratio must be positive")
    n = math.prod(input_shape)
    c_ds = max(1, round(2 * target_ratio * n / (w_out * h_out)))
    return c_ds, bandwidth_ratio(input_shape, (c_ds, h_out, w_out))[2]


def power_normalize(z: Tensor, transmit_power: float = 1.0) -> Tensor:
    """Scale each sample so its mean per-element power equals ``transmit_power``.

    The leading axis is the batch when ``z`` has 4 dims. All-zero samples are
    passed through unchanged and logged.
    """
    axes = tuple(range(1, z.ndim)) if z.ndim == 4 else tuple(range(z.ndim))
    count = math.prod(z.shape[a] for a in axes)
    energy = tsum(z * z, axis=axes, keepdims=True)
    silent = energy.data == 0
    if silent.any():
        logger.warning("power_normalize: %d all-zero sample(s) left unscaled", int(silent.sum()))
    # the floor only matters for all-zero samples, whose output stays zero
    factor = power(maximum(energy, 1e-300) * (1.0 / (transmit_power * count)), -0.5)
    return z * factor


def _gaussian(rng: np.random.Generator, shape: tuple, variance: float) -> np.ndarray:
    if variance == 0.0:
        return np.zeros(shape)
    return rng.normal(0.0, math.sqrt(variance), size=shape)


def awgn_transmit(z: Tensor, config: ChannelConfig, rng: np.random.Generator) -> Tensor:
    """``z + n`` with i.i.d. zero-mean Gaussian noise; the noise is a constant for autodiff."""
    var = config.noise_variance
    if var == 0.0:
        return z
    return z + Tensor._wrap(_gaussian(rng, z.shape, var))


def draw_fading(rng: np.random.Generator, scale: float, size) -> np.ndarray:
    h = rng.rayleigh(scale, size=size)
    low = h < _H_FLOOR
    while low.any():
        h[low] = rng.rayleigh(scale, size=int(low.sum()))
        low = h < _H_FLOOR
    return h


def rayleigh_transmit(
    z: Tensor,
    config: ChannelConfig,
    rng: np.random.Generator,
    fading: Optional[np.ndarray] = None,
) -> Tuple[Tensor, np.ndarray]:
    """Block-fading channel with perfect-CSI equalisation: ``(h z + n) / h = z + n / h``.

    One coefficient is drawn per sample (leading axis when ``z`` is batched).
    ``fading`` overrides the draw. Returns the received tensor and the ``h`` used.
    """
    batch = z.shape[0] if z.ndim == 4 else 1
    h = draw_fading(rng, config.rayleigh_scale, batch) if fading is None else np.asarray(fading, dtype=np.float64).reshape(batch)
    var = config.noise_variance
    if var == 0.0:
        return z, h
    noise = _gaussian(rng, z.shape, var)
    if z.ndim == 4:
        noise = noise / h[:, None, None, None]
    else:
        noise = noise / h[0]
    return z + Tensor._wrap(noise), h


class Channel:
    """Stateful channel: owns the RNG so repeated transmissions draw fresh noise."""

    def __init__(self, config: ChannelConfig, seed: Optional[int] = None) -> None:
        self.config = config
        self.rng = np.random.default_rng(config.seed if seed is None else seed)
        self.last_fading: Optional[np.ndarray] = None

    def __call__(self, z: Tensor) -> Tensor:
        if self.config.mode == "rayleigh":
            out, self.last_fading = rayleigh_transmit(z, self.config, self.rng)
            return out
        return awgn_transmit(z, self.config, self.rng)


def empirical_snr_db(signal_power: float, noise: np.ndarray) -> float:
    return 10.0 * math.log10(signal_power / float(np.mean(np.square(noise))))


class BandwidthAdapter(Module):
    """1×1 down-projection ``c_out -> c_ds`` before the channel and the matching up-projection after it."""

    def __init__(self, rng: np.random.Generator, c_out: int, c_ds: int) -> None:
        self.down = Conv2d(rng, c_out, c_ds, 1)
        self.up = Conv2d(rng, c_ds, c_out, 1)
        self._c_ds = c_ds

    @property
    def c_ds(self) -> int:
        return self._c_ds
