import math

import numpy as np
import pytest

from gaicomm.autodiff import Tensor, grad_check
from gaicomm.heads import TaskDecoder, TaskSpec, loss_l1, loss_seg, loss_sn, task_loss, total_loss


def test_seg_loss_uniform_logits_is_log_k():
    logits = Tensor(np.zeros((2, 5, 3, 3)))
    labels = np.random.default_rng(0).integers(0, 5, (2, 3, 3))
    assert loss_seg(logits, labels).item() == pytest.approx(math.log(5), abs=1e-12)


def test_seg_loss_hand_value_and_ignore():
    logits = np.array([[[[2.0, 0.0]]], [[[0.0, 0.0]]]])  # K=2, H=1, W=2 without batch
    logits = logits.reshape(2, 1, 2)
    labels = np.array([[0, -1]])
    expected = -math.log(math.exp(2) / (math.exp(2) + 1))
    assert loss_seg(Tensor(logits), labels).item() == pytest.approx(expected, abs=1e-12)


def test_seg_loss_rejects_bad_labels():
    with pytest.raises(ValueError):
        loss_seg(Tensor(np.zeros((1, 2, 1, 1))), np.array([[[5]]]))
    with pytest.raises(ValueError):
        loss_seg(Tensor(np.zeros((1, 2, 1, 1))), np.array([[[-1]]]))


def test_classification_loss():
    logits = Tensor(np.array([[0.0, math.log(3.0)]]))
    assert loss_seg(logits, np.array([1])).item() == pytest.approx(-math.log(0.75), abs=1e-12)


def test_l1_and_mask():
    pred = Tensor(np.array([[1.0, 2.0, 4.0]]))
    assert loss_l1(pred, np.array([[1.0, 1.0, 1.0]])).item() == pytest.approx(4 / 3)
    assert loss_l1(pred, np.array([[1.0, 1.0, 1.0]]), mask=np.array([[0, 1, 0]])).item() == 1.0


def test_sn_loss_zero_for_aligned_normals():
    gt = np.zeros((1, 3, 2, 2))
    gt[:, 2] = 1.0
    assert loss_sn(Tensor(gt * 7.0), gt).item() == pytest.approx(0.0, abs=1e-15)
    assert loss_sn(Tensor(-gt), gt).item() == pytest.approx(2.0)


def test_sn_loss_gradient():
    gt = np.random.default_rng(1).standard_normal((1, 3, 2, 2))
    gt /= np.linalg.norm(gt, axis=1, keepdims=True)
    assert grad_check(lambda p: loss_sn(p, gt), np.random.default_rng(2).standard_normal((1, 3, 2, 2))) < 1e-6


def test_total_loss_weights():
    assert total_loss([Tensor(np.array(2.0)), Tensor(np.array(3.0))], [0.5, 2.0]).item() == 7.0
    with pytest.raises(ValueError):
        total_loss([Tensor(np.array(1.0))], [1.0, 2.0])


@pytest.mark.parametrize("kind,classes,shape", [
    ("segmentation", 4, (2, 4, 16, 16)),
    ("depth", 0, (2, 1, 16, 16)),
    ("surface_normal", 0, (2, 3, 16, 16)),
    ("edge", 0, (2, 1, 16, 16)),
    ("classification", 4, (2, 4)),
])
def test_decoder_output_shapes(kind, classes, shape):
    spec = TaskSpec(kind, num_classes=classes)
    dec = TaskDecoder(np.random.default_rng(0), spec, 8, hidden=6)
    out = dec(Tensor(np.ones((2, 8, 4, 4))), (16, 16))
    assert out.shape == shape


@pytest.mark.parametrize("d", [6, 12, 18, 24])
def test_dilated_layer_keeps_spatial_size(d):
    dec = TaskDecoder(np.random.default_rng(0), TaskSpec("depth", dilation=d), 4, hidden=3)
    assert dec(Tensor(np.ones((1, 4, 5, 5)))).shape == (1, 1, 5, 5)


def test_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec("segmentation", num_classes=1)
    with pytest.raises(ValueError):
        TaskSpec("depth", dilation=5)
    with pytest.raises(ValueError):
        TaskSpec("bogus")
    assert TaskSpec("depth").name == "depth"


def test_task_loss_dispatch():
    spec = TaskSpec("depth")
    assert task_loss(Tensor(np.ones((1, 1, 2, 2))), np.zeros((1, 1, 2, 2)), spec).item() == 1.0
