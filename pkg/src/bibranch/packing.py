"""Slot layouts for images and feature maps.

Three strategies:

* ``batch`` — one ciphertext per (channel, pixel); slot index is the image
  index. Best for very large batches.
* ``hw``    — one ciphertext per channel per image, row-major flatten.
* ``bhw``   — one ciphertext per channel for the whole batch: the n tiles of
  h*w slots sit back to back, so a batch costs the same ops as one image.

Index arithmetic is fixed here once and consumed everywhere else:
bhw slot(b,i,j) = b*h*w + i*w + j, hw slot = i*w + j, batch slot = b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, UsageError
from .sim import Ciphertext, HeContext, encrypt_vector

STRATEGIES = ("batch", "hw", "bhw")


@dataclass(frozen=True)
class PackLayout:
    strategy: str
    batch: int
    height: int
    width: int
    channels: int
    slot_count: int

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise UsageError(f"unknown packing strategy {self.strategy!r}")
        if min(self.batch, self.height, self.width, self.channels) < 1:
            raise CapacityError("layout dimensions must be positive")
        need = self.slots_needed()
        if need > self.slot_count:
            raise CapacityError(
                f"{self.strategy} layout needs {need} slots per ciphertext "
                f"but only {self.slot_count} are available"
            )

    def slots_needed(self) -> int:
        """Slots used inside one ciphertext."""
        if self.strategy == "batch":
            return self.batch
        if self.strategy == "hw":
            return self.height * self.width
        return self.batch * self.height * self.width

    def ciphertext_count(self) -> int:
        if self.strategy == "batch":
            return self.channels * self.height * self.width
        if self.strategy == "hw":
            return self.batch * self.channels
        return self.channels


def slot_index(b: int, i: int, j: int, layout: PackLayout) -> int:
    """Slot of pixel (i, j) of image b under the layout's strategy."""
    if not (0 <= b < layout.batch and 0 <= i < layout.height and 0 <= j < layout.width):
        raise IndexError(
            f"coordinates (b={b}, i={i}, j={j}) outside layout "
            f"{layout.batch}x{layout.height}x{layout.width}"
        )
    if layout.strategy == "batch":
        return b
    if layout.strategy == "hw":
        return i * layout.width + j
    return b * layout.height * layout.width + i * layout.width + j


def pack(tensors: np.ndarray, layout: PackLayout, ctx: HeContext) -> list[Ciphertext]:
    """Encrypt a (n, c, h, w) batch into the layout's ciphertext list."""
    x = np.asarray(tensors, dtype=np.float64)
    if x.shape != (layout.batch, layout.channels, layout.height, layout.width):
        raise UsageError(
            f"batch shape {x.shape} does not match layout "
            f"({layout.batch}, {layout.channels}, {layout.height}, {layout.width})"
        )
    if layout.slot_count != ctx.slot_count:
        raise UsageError("layout slot_count differs from context slot_count")
    n, c, h, w = x.shape
    cts = []
    if layout.strategy == "bhw":
        for ch in range(c):
            cts.append(encrypt_vector(x[:, ch].reshape(n * h * w), ctx))
    elif layout.strategy == "hw":
        for b in range(n):
            for ch in range(c):
                cts.append(encrypt_vector(x[b, ch].reshape(h * w), ctx))
    else:  # batch: ciphertext per (channel, pixel), slot per image
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    cts.append(encrypt_vector(x[:, ch, i, j], ctx))
    return cts


def unpack(cts: list[Ciphertext], layout: PackLayout, ctx: HeContext) -> np.ndarray:
    """Invert pack() exactly (noise model off)."""
    if len(cts) != layout.ciphertext_count():
        raise UsageError(
            f"expected {layout.ciphertext_count()} ciphertexts for this layout, got {len(cts)}"
        )
    n, c, h, w = layout.batch, layout.channels, layout.height, layout.width
    out = np.empty((n, c, h, w), dtype=np.float64)
    if layout.strategy == "bhw":
        for ch, ct in enumerate(cts):
            out[:, ch] = ct.slots[: n * h * w].reshape(n, h, w)
    elif layout.strategy == "hw":
        k = 0
        for b in range(n):
            for ch in range(c):
                out[b, ch] = cts[k].slots[: h * w].reshape(h, w)
                k += 1
    else:
        k = 0
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    out[:, ch, i, j] = cts[k].slots[:n]
                    k += 1
    return out
