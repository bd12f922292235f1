from fractions import Fraction

import numpy as np
import pytest
from sklearn.base import clone

from gaicomm.autodiff import Tensor
from gaicomm.encoder import EncoderConfig
from gaicomm.estimator import GAIMultiTaskEstimator, check_images, check_targets, snr_grid
from gaicomm.heads import TaskSpec
from gaicomm.model import build_link
from gaicomm.optim import Adam
from gaicomm.synth import make_dataset

ENC = EncoderConfig(3, (16, 16), channels=(4, 4, 8, 8), strides=(1, 2, 1, 2))
TASKS = [TaskSpec("segmentation", num_classes=3), TaskSpec("depth")]


def tiny(**kw):
    params = dict(tasks=TASKS, encoder=ENC, c_out=8, c_rm=8, decoder_hidden=8, learning_rate=1e-3, max_epochs=2, seed=0)
    params.update(kw)
    return GAIMultiTaskEstimator(**params)


@pytest.fixture(scope="module")
def data():
    X, y = make_dataset(24, seed=0, height=16, width=16, num_classes=3, kinds=["segmentation", "depth"])
    return X[:16], {k: v[:16] for k, v in y.items()}, X[16:], {k: v[16:] for k, v in y.items()}


def test_adam_single_step_by_hand():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1, betas=(0.9, 0.999), eps=1e-8)
    g = np.array([0.5, -3.0])
    p.grad = g.copy()
    opt.step()
    m_hat = (0.1 * g) / 0.1
    v_hat = (0.001 * g * g) / 0.001
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), rtol=0, atol=1e-15)


def test_adam_second_step_recurrence():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([p], lr=1.0)
    for g in (1.0, 3.0):
        p.grad = np.array([g])
        opt.step()
    m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0
    step2 = (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    step1 = 1.0 / (1.0 + 1e-8)
    assert p.data[0] == pytest.approx(-step1 - step2, abs=1e-12)


def test_adam_quadratic_probe_converges():
    p = Tensor(np.array([3.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    for _ in range(300):
        loss = (p * p).sum()
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert abs(p.data[0]) < 0.05


def test_get_params_round_trip():
    est = tiny(c_rm=5)
    assert clone(est).get_params()["c_rm"] == 5
    assert est.set_params(iterations=2).iterations == 2


def test_input_validation():
    with pytest.raises(ValueError):
        check_images(np.zeros((2, 16, 16)))
    with pytest.raises(ValueError):
        check_images(np.full((1, 3, 4, 4), np.nan))
    with pytest.raises(KeyError):
        check_targets({"depth": np.zeros((1, 1, 4, 4))}, TASKS, 1)
    with pytest.raises(ValueError):
        check_targets({"segmentation": np.zeros((2, 4, 4)), "depth": np.zeros((1, 1, 4, 4))}, TASKS, 1)


def test_zero_learning_rate_leaves_parameters(data):
    X, y, Xv, yv = data
    est = tiny(learning_rate=0.0).fit(X, y, Xv, yv)
    fresh = build_link(ENC, TASKS, "full", c_out=8, c_rm=8, decoder_hidden=8, seed=0)
    for (n, p), (_, q) in zip(est.model_.named_parameters(), fresh.named_parameters()):
        assert np.array_equal(p.data, q.data), n
    assert max(est.loss_curve_) - min(est.loss_curve_) < 1.0


def test_fit_is_deterministic_and_learns(data):
    X, y, Xv, yv = data
    a = tiny(max_epochs=3).fit(X, y, Xv, yv)
    b = tiny(max_epochs=3).fit(X, y, Xv, yv)
    assert a.loss_curve_ == b.loss_curve_
    assert a.best_val_loss_ <= a.initial_val_loss_
    assert a.best_val_loss_ == min([a.initial_val_loss_] + a.val_curve_)


def test_predict_transform_score(data):
    X, y, Xv, yv = data
    est = tiny().fit(X, y, Xv, yv)
    preds = est.predict(Xv)
    assert preds["segmentation"].shape == (8, 3, 16, 16)
    assert preds["depth"].shape == (8, 1, 16, 16)
    tx = est.transform(Xv)
    assert tx.shape == (2, 8, 8, 4, 4)
    np.testing.assert_allclose(np.mean(tx**2, axis=(2, 3, 4)), 1.0, rtol=1e-12)
    assert est.score(Xv, yv) == pytest.approx(-est.weighted_loss(Xv, yv))


def test_basic_multitask_has_no_gai(data):
    X, y, Xv, yv = data
    est = tiny(architecture="basic_multitask", max_epochs=1).fit(X, y, Xv, yv)
    assert est.model_.gai is None
    assert not any(n.startswith("gai") for n, _ in est.model_.named_parameters())
    with pytest.raises(ValueError):
        est.task_node_weights(Xv)


def test_bandwidth_ratio_adapter(data):
    X, y, Xv, yv = data
    est = tiny(bandwidth_ratio=1 / 12, max_epochs=1).fit(X, y, Xv, yv)
    # k = C_ds*4*4/2 channel uses for n = 3*16*16 pixels
    assert est.c_ds_ == 2 * (3 * 16 * 16) // (12 * 4 * 4)
    assert est.achieved_ratio_ == Fraction(1, 12)
    assert est.transform(Xv).shape[2] == est.c_ds_


def test_snr_grid_counts():
    assert snr_grid(-2, 14, 2) == [-2, 0, 2, 4, 6, 8, 10, 12, 14]
    with pytest.raises(ValueError):
        snr_grid(0, 1, 0)
