"""Weight export in the engine's archive format.

`manifest.json` + `data.bin` (little-endian float32, row-major, byte
offsets). Tensor names follow the shared contract: cipher.convK.*,
plain.convK.*, connect.K.w_crot, head.*. Dense matrices are stored
input-major, so torch Linear-style (out, in) tensors never appear here;
the head parameters are already (n_in, n_out).
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .models import BiBranchNet, _conv_items


class ExportError(ValueError):
    pass


def expected_tensor_names(arch: str, n_convs: int) -> list[str]:
    names = []
    for k in range(1, n_convs + 1):
        for side in ("cipher", "plain"):
            names += [f"{side}.conv{k}.weight", f"{side}.conv{k}.bias"]
        names.append(f"connect.{k}.w_crot")
    names += ["head.w_c1", "head.w_p1", "head.w_p1_prime", "head.b1",
              "head.b1_prime", "head.w_c2", "head.w_p2", "head.b2"]
    return names


def student_tensors(student: BiBranchNet) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    for k, (cc, pc) in enumerate(zip(student.cipher.convs, student.plain.convs), start=1):
        tensors[f"cipher.conv{k}.weight"] = cc.weight.detach().numpy()
        tensors[f"cipher.conv{k}.bias"] = cc.bias.detach().numpy()
        tensors[f"plain.conv{k}.weight"] = pc.weight.detach().numpy()
        tensors[f"plain.conv{k}.bias"] = pc.bias.detach().numpy()
    for k, crot in enumerate(student.crots, start=1):
        tensors[f"connect.{k}.w_crot"] = crot.detach().numpy()
    head = {
        "head.w_c1": student.w_c1, "head.w_p1": student.w_p1,
        "head.w_p1_prime": student.w_p1_prime, "head.b1": student.b1,
        "head.b1_prime": student.b1_prime, "head.w_c2": student.w_c2,
        "head.w_p2": student.w_p2, "head.b2": student.b2,
    }
    tensors.update({k: v.detach().numpy() for k, v in head.items()})
    return tensors


def export_weights(student: BiBranchNet, path: str, *, mean, std,
                   teacher_tap: int | None = None, extra_meta: dict | None = None) -> str:
    """Write the archive; returns the directory path."""
    tensors = student_tensors(student)
    expected = expected_tensor_names(student.layout.name, len(_conv_items(student.layout.cfg)))
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise ExportError(f"student is missing tensors: {', '.join(missing)}")

    os.makedirs(path, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name in expected:  # fixed order keeps exports reproducible
        arr = np.asarray(tensors[name], dtype="<f4", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.ravel())
        offset += arr.nbytes
    meta = {
        "arch": student.layout.name,
        "norm": {"mean": np.asarray(mean, dtype=float).ravel().tolist(),
                 "std": np.asarray(std, dtype=float).ravel().tolist()},
        "teacher_tap": teacher_tap,
    }
    meta.update(extra_meta or {})
    manifest = {"dtype": "f32", "byte_order": "little", "meta": meta, "tensors": entries}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    np.concatenate(chunks).tofile(os.path.join(path, "data.bin"))
    return path


def load_archive_back(path: str) -> dict[str, np.ndarray]:
    """Re-read an archive (offset-validated); used for roundtrip checks."""
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    blob = np.fromfile(os.path.join(path, "data.bin"), dtype="<f4")
    out = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"] // 4
        if entry["offset"] % 4 or start + count > blob.size:
            raise ExportError(f"tensor {entry['name']!r} has a corrupt offset")
        out[entry["name"]] = blob[start:start + count].reshape(shape).copy()
    return out
