import numpy as np
import pytest

from vlsatools.checkpoint import (
    Checkpoint,
    CheckpointFormatError,
    load_checkpoint,
    save_checkpoint,
)
from vlsatools.retrieval_eval import evaluate


@pytest.fixture()
def ckpt(tiny_model):
    return Checkpoint.from_model(tiny_model, step=7)


def test_round_trip(tmp_path, ckpt):
    path = save_checkpoint(ckpt, tmp_path / "model.vlck")
    loaded = load_checkpoint(path)
    assert loaded.step == 7
    assert loaded.config.to_json() == ckpt.config.to_json()
    assert loaded.rng_state == ckpt.rng_state
    assert sorted(loaded.params) == sorted(ckpt.params)
    for name, value in ckpt.params.items():
        assert loaded.params[name].dtype == value.dtype
        np.testing.assert_array_equal(loaded.params[name], value)
    assert loaded.checkpoint_id == ckpt.checkpoint_id


def test_file_starts_with_magic(tmp_path, ckpt):
    path = save_checkpoint(ckpt, tmp_path / "model.vlck")
    with open(path, "rb") as f:
        assert f.read(4) == b"VLCK"


def test_bad_magic(tmp_path, ckpt):
    path = save_checkpoint(ckpt, tmp_path / "model.vlck")
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)


def test_truncated(tmp_path, ckpt):
    path = save_checkpoint(ckpt, tmp_path / "model.vlck")
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CheckpointFormatError, match="truncated"):
        load_checkpoint(path)


def test_too_short(tmp_path):
    path = tmp_path / "empty.vlck"
    path.write_bytes(b"VLCK")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_id_tracks_parameters(ckpt):
    name = sorted(ckpt.params)[0]
    changed = Checkpoint(dict(ckpt.params), ckpt.config, ckpt.step, ckpt.rng_state)
    changed.params[name] = ckpt.params[name] + 1.0
    assert changed.checkpoint_id != ckpt.checkpoint_id


def test_reports_survive_round_trip(tmp_path, ckpt, tiny_data):
    loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "model.vlck"))
    for direction in ("t2v", "a2t"):
        before = evaluate(ckpt, tiny_data, direction)
        after = evaluate(loaded, tiny_data, direction)
        assert before.to_json() == after.to_json()
        assert before.checkpoint_id == ckpt.checkpoint_id
