import numpy as np
import pytest

from gaicomm.synth import BACKGROUND_DEPTH, generate_scene, make_dataset, seg_boundary


def test_scene_is_deterministic():
    a, b = generate_scene(11), generate_scene(11)
    for key in ("image", "seg", "depth", "normals", "edges", "keypoints"):
        assert np.array_equal(getattr(a, key), getattr(b, key))
    assert not np.array_equal(generate_scene(12).image, a.image)


def test_label_shapes_and_ranges():
    s = generate_scene(3, 32, 48, 5)
    assert s.image.shape == (3, 32, 48)
    assert s.seg.shape == (32, 48) and s.seg.max() < 5 and s.seg.min() >= 0
    assert s.depth.shape == (1, 32, 48) and np.all(s.depth > 0)
    assert s.normals.shape == (3, 32, 48)
    assert np.max(np.abs(np.linalg.norm(s.normals, axis=0) - 1)) < 1e-12
    assert np.all((s.image >= 0) & (s.image <= 1))
    assert 0 <= s.keypoints.min() and s.keypoints.max() <= 1


def test_background_is_flat_and_facing_camera():
    for seed in range(10):
        s = generate_scene(seed)
        bg = s.seg == 0
        inside = np.zeros_like(bg)
        for prim in s.geometry.primitives:
            x, y = s.geometry.grid()
            inside |= prim.contains(x, y)
        flat = bg & ~seg_boundary(inside.astype(int))
        assert np.all(s.depth[0][flat] == BACKGROUND_DEPTH)
        assert np.allclose(s.normals[:, flat], [[0], [0], [1]], atol=1e-12)


def test_edges_are_segment_boundaries():
    s = generate_scene(5)
    assert np.array_equal(s.edges[0].astype(bool), seg_boundary(s.seg))


def test_seg_boundary_small_example():
    seg = np.array([[0, 0, 1], [0, 0, 1], [2, 2, 2]])
    expected = np.array([[0, 1, 1], [1, 1, 1], [1, 1, 1]], dtype=bool)
    assert np.array_equal(seg_boundary(seg), expected)


def test_dataset_splits_are_disjoint():
    x0, y0 = make_dataset(4, seed=1, split=0)
    x1, _ = make_dataset(4, seed=1, split=1)
    assert x0.shape == (4, 3, 32, 32)
    assert not np.array_equal(x0, x1)
    assert set(y0) == {"segmentation", "depth", "surface_normal", "edge", "keypoint", "classification"}
    assert y0["classification"].shape == (4,)


def test_dataset_kinds_filter():
    _, y = make_dataset(2, kinds=["segmentation", "depth"])
    assert set(y) == {"segmentation", "depth"}


def test_too_small_rejected():
    with pytest.raises(ValueError):
        generate_scene(0, 8, 8)
