import struct

import numpy as np

import pytest

from CFSFL.components.model_bundle import ModelBundle
from CFSFL.exception import CheckpointError
from CFSFL.utils.common import load_checkpoint, save_checkpoint


def test_bundle_round_trip_is_exact_at_single_precision(toy_bundle, tmp_path):
    toy_bundle.mark_stage(1, 4)
    toy_bundle.run_config = {"train.T": 2}
    path = toy_bundle.save(tmp_path / "model.ckpt")

    loaded = ModelBundle.load(path)
    assert loaded.config == toy_bundle.config
    assert loaded.completed_stages == [1]
    assert loaded.epochs == {"stage1": 4}
    assert loaded.run_config == {"train.T": 2}
    for name in toy_bundle.params:
        expected = toy_bundle.params[name].data.astype(np.float32).astype(np.float64)
        assert np.array_equal(loaded.params[name].data, expected), name
        assert loaded.params.owner(name) == toy_bundle.params.owner(name)


def test_saving_twice_gives_identical_bytes(toy_bundle, tmp_path):
    first = toy_bundle.save(tmp_path / "a.ckpt").read_bytes()
    second = toy_bundle.save(tmp_path / "b.ckpt").read_bytes()
    assert first == second


def test_file_layout(tmp_path):
    path = tmp_path / "one.ckpt"
    save_checkpoint(path, {"w": np.array([[1.0, 2.0]])}, {"seed": 1})
    raw = path.read_bytes()
    assert raw[:4] == b"CFSF"
    assert struct.unpack_from("<II", raw, 4) == (1, 1)
    assert struct.unpack_from("<H", raw, 12) == (1,)
    assert raw[14:15] == b"w"
    assert struct.unpack_from("<BBII", raw, 15) == (0, 2, 1, 2)
    assert np.frombuffer(raw, dtype="<f4", count=2, offset=25).tolist() == [1.0, 2.0]
    tensors, meta = load_checkpoint(path)
    assert meta == {"seed": 1}
    assert tensors["w"].dtype == np.float64


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_unknown_version(toy_bundle, tmp_path):
    path = toy_bundle.save(tmp_path / "model.ckpt")
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        ModelBundle.load(path)


@pytest.mark.parametrize("keep", [10, 200, -5])
def test_truncated_file(toy_bundle, tmp_path, keep):
    path = toy_bundle.save(tmp_path / "model.ckpt")
    raw = path.read_bytes()
    path.write_bytes(raw[:keep])
    with pytest.raises(CheckpointError):
        ModelBundle.load(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ModelBundle.load(tmp_path / "absent.ckpt")


def test_tensor_mismatch(toy_bundle, tmp_path):
    arrays = toy_bundle.params.arrays()
    arrays["theta.dec.1.b"] = np.zeros(3)
    path = tmp_path / "shape.ckpt"
    save_checkpoint(path, arrays, toy_bundle.metadata())
    with pytest.raises(CheckpointError):
        ModelBundle.load(path)

    del arrays["theta.dec.1.b"]
    save_checkpoint(path, arrays, toy_bundle.metadata())
    with pytest.raises(CheckpointError, match="missing"):
        ModelBundle.load(path)


def test_incomplete_metadata(toy_bundle, tmp_path):
    path = tmp_path / "meta.ckpt"
    save_checkpoint(path, toy_bundle.params.arrays(), {"seed": 1})
    with pytest.raises(CheckpointError):
        ModelBundle.load(path)


def test_vocabulary_check(toy_bundle):
    toy_bundle.check_vocabulary(10)
    with pytest.raises(CheckpointError):
        toy_bundle.check_vocabulary(11)
