import math
from fractions import Fraction

import numpy as np
import pytest

from gaicomm.autodiff import Tensor, grad_check
from gaicomm.channel import (
    BandwidthAdapter,
    Channel,
    ChannelConfig,
    bandwidth_ratio,
    draw_fading,
    empirical_snr_db,
    power_normalize,
    rayleigh_transmit,
    solve_cds,
)


def test_headline_ratio_is_one_twelfth():
    n, k, r = bandwidth_ratio((3, 224, 224), (512, 7, 7))
    assert n == 150528
    assert k == Fraction(12544)
    assert r == Fraction(1, 12)


def test_solve_cds_round_trip():
    c_ds, achieved = solve_cds(1 / 12, (3, 224, 224), 7, 7)
    assert c_ds == 512 and achieved == Fraction(1, 12)
    c_ds, achieved = solve_cds(0.0833, (3, 32, 32), 4, 4)
    assert c_ds == 32
    assert abs(float(achieved) - 0.0833) < 0.01


def test_power_normalize_per_sample():
    z = np.random.default_rng(0).standard_normal((3, 4, 2, 2)) * np.array([1, 5, 0.1])[:, None, None, None]
    out = power_normalize(Tensor(z), 2.0).data
    np.testing.assert_allclose(np.mean(out**2, axis=(1, 2, 3)), 2.0, rtol=1e-12)


def test_power_normalize_zero_sample_passes_through():
    z = np.zeros((2, 1, 2, 2))
    z[1] = 1.0
    out = power_normalize(Tensor(z), 1.0).data
    assert np.all(out[0] == 0) and np.allclose(out[1], 1.0)


def test_power_normalize_gradient():
    assert grad_check(lambda x: (power_normalize(x, 1.5) * Tensor(np.arange(8.0).reshape(2, 1, 2, 2))).sum(),
                      np.random.default_rng(1).standard_normal((2, 1, 2, 2))) < 1e-6


def test_noise_variance_formula():
    assert ChannelConfig(10.0, 2.0, "awgn").noise_variance == pytest.approx(0.2)
    assert ChannelConfig(math.inf, 1.0, "awgn").noise_variance == 0.0
    assert ChannelConfig(3.0, 1.0, "noiseless").noise_variance == 0.0


@pytest.mark.parametrize("snr", [-2.0, 0.0, 6.0, 10.0, 14.0])
def test_awgn_monte_carlo_snr(snr):
    z = Tensor(np.ones((1, 1_000_000)))
    noise = Channel(ChannelConfig(snr, 1.0, "awgn"), seed=int(snr * 10) + 100)(z).data - 1.0
    assert abs(empirical_snr_db(1.0, noise) - snr) < 0.1


def test_infinite_snr_is_identity():
    z = Tensor(np.random.default_rng(2).standard_normal((2, 3)))
    assert np.array_equal(Channel(ChannelConfig(math.inf, mode="awgn"))(z).data, z.data)


def test_rayleigh_noiseless_exact():
    z = Tensor(np.random.default_rng(3).standard_normal((3, 2, 2, 2)))
    out, h = rayleigh_transmit(z, ChannelConfig(math.inf, mode="rayleigh"), np.random.default_rng(0))
    assert np.array_equal(out.data, z.data)
    assert h.shape == (3,)


def test_rayleigh_noise_scaled_by_fading():
    z = Tensor(np.zeros((1, 200_000)))
    fading = np.array([0.5])
    out, _ = rayleigh_transmit(z, ChannelConfig(0.0, mode="rayleigh"), np.random.default_rng(4), fading=fading)
    # equalised noise has variance sigma^2 / h^2 = 1 / 0.25
    assert np.var(out.data) == pytest.approx(4.0, rel=0.02)


def test_fading_distribution_scale():
    h = draw_fading(np.random.default_rng(5), 0.2, 400_000)
    assert np.mean(h) == pytest.approx(0.2 * math.sqrt(math.pi / 2), rel=0.01)
    assert np.all(h >= 1e-6)


def test_channel_stream_is_seeded():
    cfg = ChannelConfig(0.0, mode="awgn")
    z = Tensor(np.zeros((2, 5)))
    assert np.array_equal(Channel(cfg, seed=9)(z).data, Channel(cfg, seed=9)(z).data)
    ch = Channel(cfg, seed=9)
    assert not np.array_equal(ch(z).data, ch(z).data)


def test_bad_modes_rejected():
    with pytest.raises(ValueError):
        ChannelConfig(mode="bogus")
    with pytest.raises(ValueError):
        ChannelConfig(transmit_power=0)


def test_adapter_shapes():
    ad = BandwidthAdapter(np.random.default_rng(0), 16, 4)
    z = Tensor(np.ones((2, 16, 3, 3)))
    assert ad.down(z).shape == (2, 4, 3, 3)
    assert ad.up(ad.down(z)).shape == (2, 16, 3, 3)
    assert ad.c_ds == 4
