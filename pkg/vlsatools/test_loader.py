import json
import os

import numpy as np
import pytest

from vlsatools.loader import DatasetLoader, load_dataset, save_dataset
from vlsatools.reader import DatasetFormatError


def test_sample_names(triplet_file):
    assert triplet_file.make_sample_id(12) == "sample_000012"
    assert triplet_file.make_sample_filename("sample_000012") == "sample_000012.vlsa"


def test_record_header(triplet_reader):
    record = triplet_reader.encode_record("text", np.array([5, 6, 0], dtype=np.int32))
    assert record[:4] == b"VLSA"
    assert len(record) == 16 + 4 + 3 * 4
    modality, array, end = triplet_reader.decode_record(record, 0, "x.vlsa")
    assert modality == "text"
    assert array.tolist() == [5, 6, 0]
    assert end == len(record)


def test_bad_magic(triplet_reader):
    tokens = np.zeros(2, dtype=np.int32)
    record = bytearray(triplet_reader.encode_record("text", tokens))
    record[:4] = b"NOPE"
    with pytest.raises(DatasetFormatError, match="bad magic"):
        triplet_reader.decode_record(bytes(record), 0, "x.vlsa")


def test_truncated_payload(triplet_reader):
    record = triplet_reader.encode_record("audio", np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(DatasetFormatError, match="truncated"):
        triplet_reader.decode_record(record[:-3], 0, "x.vlsa")


def test_round_trip(tmp_path, tiny_data):
    manifest = save_dataset(tiny_data, tmp_path)
    assert os.path.basename(manifest) == "manifest.json"
    loaded = load_dataset(tmp_path)
    assert len(loaded) == len(tiny_data)
    assert all(a.equals(b) for a, b in zip(tiny_data, loaded))
    assert loaded.vocab.token_to_id == tiny_data.vocab.token_to_id
    assert vars(loaded.data_config) == vars(tiny_data.data_config)
    assert loaded.metadata == tiny_data.metadata


def test_threaded_load_keeps_order(tmp_path, tiny_data):
    save_dataset(tiny_data, tmp_path, threads=2)
    loaded = load_dataset(tmp_path, threads=3)
    assert [t.id for t in loaded] == [t.id for t in tiny_data]


def test_manifest_records_mode_and_classes(tmp_path, tiny_data):
    save_dataset(tiny_data, tmp_path)
    with open(tmp_path / "manifest.json") as f:
        document = json.load(f)
    assert document["metadata"]["mode"] == "correlated"
    assert document["metadata"]["classes"] == 3
    assert document["count"] == 8


def test_missing_sample_file(tmp_path, tiny_data):
    save_dataset(tiny_data, tmp_path)
    victim = DatasetLoader(tmp_path).build_sample_path(tiny_data[3].id)
    os.remove(victim)
    with pytest.raises(DatasetFormatError) as err:
        load_dataset(tmp_path)
    assert err.value.path == victim


def test_shape_mismatch(tmp_path, tiny_data):
    save_dataset(tiny_data, tmp_path)
    with open(tmp_path / "manifest.json") as f:
        document = json.load(f)
    document["data_config"]["n_time"] = 32
    with open(tmp_path / "manifest.json", "w") as f:
        json.dump(document, f)
    with pytest.raises(DatasetFormatError, match="does not match manifest"):
        load_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetFormatError, match="manifest not found"):
        load_dataset(tmp_path)


def test_count_mismatch(tmp_path, tiny_data):
    save_dataset(tiny_data, tmp_path)
    with open(tmp_path / "manifest.json") as f:
        document = json.load(f)
    document["count"] = 9
    with open(tmp_path / "manifest.json", "w") as f:
        json.dump(document, f)
    with pytest.raises(DatasetFormatError, match="count"):
        load_dataset(tmp_path)
