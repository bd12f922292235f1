import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gaicomm import autodiff as ad
from gaicomm.autodiff import FlopCounter, Tensor, flop_stage, grad_check, no_grad


def conv_loops(x, w, b, stride, pad, dil):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - dil * (k - 1) - 1) // stride + 1
    wo = (wd + 2 * pad - dil * (k - 1) - 1) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                s = b[o]
                for c in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            s += w[o, c, u, v] * xp[c, i * stride + u * dil, j * stride + v * dil]
                out[o, i, j] = s
    return out


@pytest.mark.parametrize("stride,pad,dil", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 3, 3)])
def test_conv2d_matches_loops(stride, pad, dil):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 9, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad, dil).data
    np.testing.assert_allclose(got, conv_loops(x, w, b, stride, pad, dil), atol=1e-12)


def test_conv2d_batched_equals_unbatched():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 6, 6))
    w = Tensor(rng.standard_normal((5, 3, 3, 3)))
    batched = ad.conv2d(Tensor(x), w, padding=1).data
    for i in range(2):
        np.testing.assert_allclose(batched[i], ad.conv2d(Tensor(x[i]), w, padding=1).data, atol=1e-12)


def test_conv2d_rejects_bad_args():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        ad.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), stride=0)
    with pytest.raises(ValueError):
        ad.conv2d(x, Tensor(np.zeros((3, 5, 3, 3))))


def test_d_square_is_two_x():
    x = Tensor(np.array([3.0]), requires_grad=True)
    ad.tsum(x * x).backward()
    assert x.grad[0] == 6.0


def test_softmax_rows_sum_to_one():
    z = np.random.default_rng(2).standard_normal((5, 7)) * 30
    s = ad.softmax(Tensor(z)).data
    assert np.max(np.abs(s.sum(-1) - 1)) < 1e-12


@pytest.mark.parametrize(
    "fn",
    [
        lambda x: ad.tsum(ad.exp(x) * x),
        lambda x: ad.tsum(ad.log(x * x + 1.0)),
        lambda x: ad.tsum(ad.softmax(x) * Tensor(np.arange(12.0).reshape(3, 4))),
        lambda x: ad.tsum(ad.log_softmax(x, axis=0)),
        lambda x: ad.tsum(ad.leaky_relu(x, 0.2) * 3.0),
        lambda x: ad.tsum(ad.sqrt(x * x + 2.0) / (x * x + 1.0)),
        lambda x: ad.tsum(ad.matmul(x, ad.transpose(x))),
        lambda x: ad.mean(ad.concat([x, x * 2.0], axis=1)),
        lambda x: ad.tsum(ad.stack([x, x], axis=0)[1] * x),
        lambda x: ad.tsum(ad.broadcast_to(ad.reshape(x, (3, 1, 4)), (3, 2, 4)) ** 2),
    ],
)
def test_grad_check_elementary(fn):
    x = np.random.default_rng(3).standard_normal((3, 4))
    assert grad_check(fn, x) < 1e-6


def test_grad_check_conv_pool_resize():
    rng = np.random.default_rng(4)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))

    def f(x):
        h = ad.relu(ad.conv2d(x, w, stride=2, padding=2, dilation=2))
        return ad.tsum(ad.global_avg_pool(ad.bilinear_resize(h, 5, 9)) ** 2)

    assert grad_check(f, rng.standard_normal((2, 2, 7, 7))) < 1e-6


def test_backward_twice_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = ad.tsum(x * x)
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_forward_raises():
    with pytest.raises(FloatingPointError):
        ad.log(Tensor(np.array([0.0, 1.0])))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_bilinear_identity_and_constant():
    x = np.random.default_rng(5).standard_normal((1, 2, 4, 6))
    assert np.array_equal(ad.bilinear_resize(Tensor(x), 4, 6).data, x)
    c = ad.bilinear_resize(Tensor(np.full((2, 3, 3), -1.25)), 7, 2).data
    assert np.all(c == -1.25)


def test_bilinear_half_pixel_upsample_2x():
    # half-pixel centres: output 0 samples input -0.25 (clamped to 0), output 1 samples 0.25
    x = np.array([[[0.0, 4.0]]])
    got = ad.bilinear_resize(Tensor(x), 1, 4).data.ravel()
    np.testing.assert_allclose(got, [0.0, 1.0, 3.0, 4.0])


def test_flop_counter_stages():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((3, 5)))
    with FlopCounter() as fc:
        with flop_stage("m"):
            ad.matmul(a, b)
        with flop_stage("r"):
            ad.bilinear_resize(Tensor(np.ones((2, 3, 3))), 4, 4)
        ad.scale(a, 2.0)
    assert fc.counts["m"] == 2 * 3 * 5
    assert fc.counts["r"] == 9 * 2 * 4 * 4
    assert fc.total() == 30 + 288


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 5), elements=st.floats(-50, 50)))
def test_softmax_property(z):
    s = ad.softmax(Tensor(z)).data
    assert np.all(s >= 0)
    assert np.max(np.abs(s.sum(-1) - 1)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 6), st.integers(1, 6), st.integers(1, 9), st.integers(1, 9),
    st.floats(-5, 5),
)
def test_resize_preserves_constants(h, w, oh, ow, c):
    out = ad.bilinear_resize(Tensor(np.full((1, h, w), c)), oh, ow).data
    assert out.shape == (1, oh, ow)
    assert np.all(out == c)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)), arrays(np.float64, (2, 4), elements=st.floats(-3, 3)))
def test_matmul_gradient_is_transpose_product(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ad.tsum(ad.matmul(ta, tb)).backward()
    np.testing.assert_allclose(ta.grad, np.ones((3, 4)) @ b.T, atol=1e-12)
    np.testing.assert_allclose(tb.grad, a.T @ np.ones((3, 4)), atol=1e-12)
