import numpy as np
import pytest

from gaicomm.autodiff import Tensor
from gaicomm.encoder import EncoderConfig, ResidualBlock, ResNetEncoder
from gaicomm.nn import child_rng


def test_resnet18_layout():
    cfg = EncoderConfig.resnet18((224, 224))
    assert cfg.num_blocks == 8
    assert cfg.alpha == 8
    assert cfg.output_shape == (512, 28, 28)
    assert [s[0] for s in cfg.block_shapes] == [64, 64, 128, 128, 256, 256, 512, 512]


def test_resnet34_has_16_blocks():
    cfg = EncoderConfig.resnet34((32, 32), width=0.25)
    assert cfg.num_blocks == 16
    assert cfg.output_shape == (128, 4, 4)


def test_block_shapes_match_forward():
    cfg = EncoderConfig.resnet18((32, 32), width=0.125)
    enc = ResNetEncoder(cfg, child_rng(0, 1))
    feats = enc(Tensor(np.random.default_rng(0).uniform(size=(2, 3, 32, 32))))
    assert [f.shape[1:] for f in feats] == cfg.block_shapes
    assert feats[-1].shape[1:] == cfg.output_shape


def test_rejects_indivisible_input():
    with pytest.raises(ValueError):
        EncoderConfig(3, (30, 30))


def test_zero_convs_give_relu_identity():
    block = ResidualBlock(np.random.default_rng(0), 4, 4, 1)
    for conv in (block.conv1, block.conv2):
        conv.weight.data[:] = 0
    x = np.random.default_rng(1).standard_normal((1, 4, 5, 5))
    assert np.array_equal(block(Tensor(x)).data, np.maximum(x, 0))


def test_projection_only_when_needed():
    rng = np.random.default_rng(0)
    assert ResidualBlock(rng, 4, 4, 1).proj is None
    assert ResidualBlock(rng, 4, 8, 1).proj is not None
    assert ResidualBlock(rng, 4, 4, 2).proj is not None


def test_channel_mismatch_raises():
    block = ResidualBlock(np.random.default_rng(0), 4, 4, 1)
    with pytest.raises(ValueError):
        block(Tensor(np.zeros((1, 3, 4, 4))))
