"""Archive export: completeness, bitwise roundtrip, corruption detection."""

import json

import numpy as np
import pytest
import torch

from bitrainer.export import ExportError, expected_tensor_names, export_weights, load_archive_back, student_tensors
from bitrainer.models import build_student


@pytest.fixture
def student():
    torch.manual_seed(0)
    return build_student("cnn3")


def test_manifest_covers_every_referenced_tensor(student, tmp_path):
    export_weights(student, str(tmp_path), mean=[0.0], std=[1.0], teacher_tap=1)
    manifest = json.load(open(tmp_path / "manifest.json"))
    names = {e["name"] for e in manifest["tensors"]}
    assert names == set(expected_tensor_names("cnn3", 1))
    assert manifest["meta"]["teacher_tap"] == 1
    assert manifest["meta"]["norm"]["mean"] == [0.0]


def test_roundtrip_is_bitwise_identical(student, tmp_path):
    export_weights(student, str(tmp_path), mean=[0.1], std=[0.9])
    back = load_archive_back(str(tmp_path))
    for name, tensor in student_tensors(student).items():
        assert np.array_equal(back[name], np.asarray(tensor, dtype=np.float32))


def test_head_matrices_are_input_major(student, tmp_path):
    export_weights(student, str(tmp_path), mean=[0.0], std=[1.0])
    back = load_archive_back(str(tmp_path))
    assert back["head.w_c1"].shape == (125, 50)
    assert back["head.w_p1"].shape == (720, 50)
    assert back["head.w_c2"].shape == (50, 10)
    assert back["cipher.conv1.weight"].shape == (5, 1, 5, 5)
    assert back["connect.1.w_crot"].shape == (5, 5)


def test_corrupt_offset_raises(student, tmp_path):
    export_weights(student, str(tmp_path), mean=[0.0], std=[1.0])
    manifest = json.load(open(tmp_path / "manifest.json"))
    manifest["tensors"][-1]["offset"] += 4 * 10 ** 6
    json.dump(manifest, open(tmp_path / "manifest.json", "w"))
    with pytest.raises(ExportError, match="corrupt offset"):
        load_archive_back(str(tmp_path))


def test_missing_tensor_listed(student, tmp_path, monkeypatch):
    import bitrainer.export as export_mod

    real = expected_tensor_names("cnn3", 1)
    monkeypatch.setattr(export_mod, "expected_tensor_names",
                        lambda arch, n: real + ["head.w_c3"])
    with pytest.raises(ExportError, match="head.w_c3"):
        export_weights(student, str(tmp_path), mean=[0.0], std=[1.0])


def test_export_deterministic_bytes(student, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    export_weights(student, str(a), mean=[0.0], std=[1.0])
    export_weights(student, str(b), mean=[0.0], std=[1.0])
    assert (a / "data.bin").read_bytes() == (b / "data.bin").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
