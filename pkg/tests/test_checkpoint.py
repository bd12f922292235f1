import struct

import numpy as np
import pytest

from gaicomm.checkpoint import MAGIC, CheckpointError, dumps, load_checkpoint, loads, save_checkpoint


def params():
    rng = np.random.default_rng(0)
    return {"a": rng.standard_normal((3, 4)), "b.0": np.array([1e-300, -0.0, 5e300]), "c": rng.standard_normal(())}


def test_round_trip_bit_exact(tmp_path):
    p = params()
    save_checkpoint(p, tmp_path / "m.gai1", {"x": 1})
    got, meta = load_checkpoint(tmp_path / "m.gai1")
    assert meta == {"x": 1}
    assert list(got) == list(p)
    for k in p:
        assert got[k].tobytes() == np.asarray(p[k], dtype="<f8").tobytes()


def test_save_load_save_identical_bytes(tmp_path):
    save_checkpoint(params(), tmp_path / "a.gai1", {"k": [1, 2]})
    p, meta = load_checkpoint(tmp_path / "a.gai1")
    save_checkpoint(p, tmp_path / "b.gai1", meta)
    assert (tmp_path / "a.gai1").read_bytes() == (tmp_path / "b.gai1").read_bytes()


def test_layout():
    blob = dumps({"w": np.array([1.0, 2.0])})
    assert blob[:4] == MAGIC
    (n,) = struct.unpack("<Q", blob[4:12])
    assert blob[12 + n :] == np.array([1.0, 2.0], dtype="<f8").tobytes()


def test_bad_magic():
    blob = bytearray(dumps(params()))
    blob[:4] = b"GAI2"
    with pytest.raises(CheckpointError):
        loads(bytes(blob))


def test_truncated_payload():
    with pytest.raises(CheckpointError):
        loads(dumps(params())[:-8])


def test_dims_disagree_with_payload():
    blob = dumps({"w": np.zeros(3)}).replace(b'"dims": [3]', b'"dims": [4]')
    with pytest.raises(CheckpointError):
        loads(blob)
