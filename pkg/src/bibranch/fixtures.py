"""Deterministic fixtures: random-but-tame network weights and a bundled
digit-image corpus, so inference and the acceptance suite run without any
training artifacts or dataset downloads.

Weight scales are chosen so the squared activations keep logits O(1); the
encrypted and plain paths then agree to ~1e-13 in float64.
"""

from __future__ import annotations

import numpy as np

from . import catalog
from .archive import TensorArchive, write_archive
from .errors import UsageError


def _he_scaled(rng, shape, fan_in, gain=1.0):
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)


def make_fixture_weights(arch: str = "cnn3", seed: int = 0) -> dict[str, np.ndarray]:
    """Random weights for every tensor a catalog architecture references."""
    bundle = catalog.get(arch)
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}

    def conv_like(spec_list):
        for spec in spec_list:
            if spec.kind == "conv":
                kh, kw = spec.kernel
                fan = spec.in_channels * kh * kw
                tensors[spec.weight] = _he_scaled(rng, (spec.out_channels, spec.in_channels, kh, kw), fan)
                if spec.bias:
                    tensors[spec.bias] = rng.normal(0.0, 0.02, size=spec.out_channels)
            elif spec.kind == "residual" and spec.proj_weight:
                kh, kw = spec.kernel
                cin = _channels_before(spec_list, spec)
                cout = _channels_at(spec_list, spec)
                tensors[spec.proj_weight] = _he_scaled(rng, (cout, cin, kh, kw), cin * kh * kw)
            elif spec.kind == "fc":
                tensors[spec.weight] = _he_scaled(rng, (spec.in_channels, spec.out_channels), spec.in_channels)
                if spec.bias:
                    tensors[spec.bias] = rng.normal(0.0, 0.02, size=spec.out_channels)

    net = bundle.bi
    conv_like(net.cipher_layers)
    conv_like(net.plain_layers)
    for crot, (ch_c, ch_p) in catalog.crot_shapes(net).items():
        # uniform channel average start, plus a small random wiggle
        tensors[crot] = np.full((ch_c, ch_p), 1.0 / ch_p) + rng.normal(0.0, 0.05 / ch_p, size=(ch_c, ch_p))
    shapes = catalog.branch_shapes(net)
    n_c, n_p = shapes["n_c"], shapes["n_p"]
    half, n2 = net.head.n1 // 2, net.head.n2
    h = net.head
    tensors[h.w_c1] = _he_scaled(rng, (n_c, half), n_c)
    tensors[h.w_p1] = _he_scaled(rng, (n_p, half), n_p)
    tensors[h.w_p1_prime] = _he_scaled(rng, (n_p, half), n_p)
    tensors[h.b1] = rng.normal(0.0, 0.02, size=half)
    tensors[h.b1_prime] = rng.normal(0.0, 0.02, size=half)
    tensors[h.w_c2] = _he_scaled(rng, (half, n2), half)
    tensors[h.w_p2] = _he_scaled(rng, (half, n2), half)
    tensors[h.b2] = rng.normal(0.0, 0.02, size=n2)

    conv_like(bundle.backbone.layers)
    return tensors


def _channels_before(spec_list, target):
    ch = None
    for spec in spec_list:
        if spec is target:
            break
        if spec.kind == "save" and spec.tag == target.tag:
            return ch
        if spec.kind == "conv":
            ch = spec.out_channels
    return ch


def _channels_at(spec_list, target):
    ch = None
    for spec in spec_list:
        if spec.kind == "conv":
            ch = spec.out_channels
        if spec is target:
            return ch
    return ch


def fixture_archive(path: str, arch: str = "cnn3", seed: int = 0) -> TensorArchive:
    """Write fixture weights to disk and hand back the loaded archive."""
    tensors = make_fixture_weights(arch, seed)
    meta = {"arch": arch, "seed": seed, "fixture": True,
            "norm": {"mean": 0.0, "std": 1.0}}
    write_archive(path, tensors, meta)
    return TensorArchive.load(path)


def fixture_weights(arch: str = "cnn3", seed: int = 0) -> TensorArchive:
    """In-memory fixture archive (no disk roundtrip)."""
    tensors = {k: np.asarray(v, dtype=np.float32).astype(np.float64)
               for k, v in make_fixture_weights(arch, seed).items()}
    return TensorArchive(tensors, {"arch": arch, "seed": seed, "fixture": True})


def digit_images(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """n real handwritten digits at 28x28 MNIST geometry, values in [0, 1].

    Uses the digit corpus bundled with scikit-learn (8x8 originals),
    block-upsampled to 32x32 and center-cropped to 28x28. Returns
    (images (n,1,28,28), labels (n,)).
    """
    from sklearn.datasets import load_digits

    data = load_digits()
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(data.images))[:n]
    if n > len(data.images):
        raise UsageError(f"only {len(data.images)} bundled digits available")
    imgs = data.images[idx] / 16.0
    big = np.kron(imgs, np.ones((4, 4)))          # (n, 32, 32)
    out = big[:, 2:30, 2:30][:, None, :, :]
    return np.ascontiguousarray(out), data.target[idx].copy()


def cifar_like_images(n: int, seed: int = 0) -> np.ndarray:
    """Smooth random (n, 3, 32, 32) images in [0, 1] for shape/capacity tests."""
    rng = np.random.default_rng(seed)
    coarse = rng.random((n, 3, 8, 8))
    return np.kron(coarse, np.ones((1, 1, 4, 4)))


def write_samples(path: str, images: np.ndarray, labels: np.ndarray | None = None) -> str:
    """Save a sample batch as .npz with the keys the CLI ingests."""
    payload = {"images": np.asarray(images, dtype=np.float32)}
    if labels is not None:
        payload["labels"] = np.asarray(labels)
    np.savez(path, **payload)
    return path
