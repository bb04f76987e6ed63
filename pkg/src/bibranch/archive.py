"""Portable weight container: `manifest.json` + `data.bin`.

data.bin is a flat little-endian float32 blob; the manifest lists every
tensor's name, shape, and byte offset (row-major). The trainer writes this
format and the engine only ever reads weights through it, so the two sides
stay decoupled.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ArchiveError, IngestionError

MANIFEST = "manifest.json"
BLOB = "data.bin"


class TensorArchive:
    """Read-side view of an archive directory."""

    def __init__(self, tensors: dict[str, np.ndarray], meta: dict | None = None):
        self._tensors = tensors
        self.meta = meta or {}

    def names(self) -> list[str]:
        return list(self._tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise ArchiveError(f"archive has no tensor named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    @classmethod
    def load(cls, path: str) -> "TensorArchive":
        """Load and validate an archive (directory or manifest path)."""
        if os.path.isdir(path):
            manifest_path = os.path.join(path, MANIFEST)
        else:
            manifest_path = path
        blob_path = os.path.join(os.path.dirname(manifest_path), BLOB)
        try:
            with open(manifest_path) as fh:
                manifest = json.load(fh)
            blob = np.fromfile(blob_path, dtype="<f4")
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestionError(f"cannot read weight archive at {path!r}: {exc}") from exc

        if manifest.get("dtype", "f32") != "f32":
            raise ArchiveError(f"unsupported dtype {manifest.get('dtype')!r}")
        total_bytes = blob.size * 4
        spans = []
        tensors = {}
        for entry in manifest.get("tensors", []):
            name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            end = offset + count * 4
            if offset % 4 or offset < 0 or end > total_bytes:
                raise ArchiveError(
                    f"tensor {name!r}: byte range [{offset}, {end}) outside blob of {total_bytes} bytes"
                )
            if name in tensors:
                raise ArchiveError(f"duplicate tensor name {name!r}")
            spans.append((offset, end, name))
            tensors[name] = blob[offset // 4:end // 4].astype(np.float64).reshape(shape)
        spans.sort()
        for (a0, a1, n1), (b0, b1, n2) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ArchiveError(f"tensors {n1!r} and {n2!r} overlap in the blob")
        return cls(tensors, manifest.get("meta", {}))


def write_archive(path: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Write tensors to `path/manifest.json` + `path/data.bin`; returns path."""
    os.makedirs(path, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr32 = np.asarray(arr, dtype="<f4", order="C")
        entries.append({"name": name, "shape": list(arr32.shape), "offset": offset})
        chunks.append(arr32.ravel())
        offset += arr32.nbytes
    manifest = {"dtype": "f32", "byte_order": "little", "meta": meta or {}, "tensors": entries}
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    np.concatenate(chunks).tofile(os.path.join(path, BLOB))
    return path
