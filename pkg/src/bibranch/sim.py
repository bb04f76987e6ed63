"""Functional simulator of CKKS-style ciphertext semantics.

Models what an evaluator observes through decryption: slot-wise add/mul,
cyclic rotation, and a multiplicative level budget. No lattice arithmetic,
keys, or noise growth — values are exact float64 unless the optional
fixed-point rounding model is switched on, in which case every product is
snapped to the 1/scale grid.

Ciphertexts are immutable values and safe to share across threads. The one
mutable object is OpRecorder; concurrent code gives each worker its own
recorder and merges on join.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from .backend import ops as _ops
from .errors import CapacityError, DepthBudgetError, ParameterError, UsageError

# Per-operation latencies (milliseconds per ciphertext op) for typical CPU
# implementations of the three schemes; CKKS is the engine default.
LATENCY_MS = {
    "BGV": {"Add_PC": 0.049, "Add_CC": 0.077, "Mul_PC": 2.055, "Mul_CC": 3.379},
    "CKKS": {"Add_PC": 0.039, "Add_CC": 0.077, "Mul_PC": 0.173, "Mul_CC": 0.390},
    "TFHE": {"Add_PC": 56.03, "Add_CC": 256.8, "Mul_PC": 1018.0, "Mul_CC": 1585.0},
}

SCHEMES = tuple(LATENCY_MS)

# Counter keys. HE_OP_KEYS are the ones that enter the HEOP total; Rot and
# Act_C ride along for reporting, Mul_PC_mask is the informational subset of
# Mul_PC spent on output masks.
HE_OP_KEYS = ("Add_PC", "Add_CC", "Mul_PC", "Mul_CC")
COUNTER_KEYS = HE_OP_KEYS + ("Rot", "Act_C", "Mul_PC_mask")

PlainLike = Union[np.ndarray, list, tuple]


def _zero_counts() -> dict:
    return {k: 0 for k in COUNTER_KEYS}


class OpRecorder:
    """Counts homomorphic operations, with optional per-layer attribution.

    Ops recorded inside a `with rec.layer("name"):` scope are attributed to
    that scope (innermost wins), so the per-layer deltas always sum to the
    totals. Workers running in parallel each use a private recorder and the
    results are combined with merge().
    """

    def __init__(self):
        self.counters = _zero_counts()
        self.per_layer: list[tuple[str, dict]] = []
        self._stack: list[tuple[str, dict]] = []
        self._unscoped = _zero_counts()

    def bump(self, key: str, n: int = 1) -> None:
        self.counters[key] += n
        if self._stack:
            self._stack[-1][1][key] += n
        else:
            self._unscoped[key] += n

    def layer(self, layer_id: str) -> "_LayerScope":
        return _LayerScope(self, layer_id)

    @property
    def current_layer(self) -> str | None:
        return self._stack[-1][0] if self._stack else None

    def merge(self, other: "OpRecorder") -> None:
        """Fold another recorder in (deterministic: counters add, layer
        entries append in the other recorder's completion order)."""
        for k, v in other.counters.items():
            self.counters[k] += v
        self.per_layer.extend((lid, dict(d)) for lid, d in other.per_layer)
        for k, v in other._unscoped.items():
            self._unscoped[k] += v

    def layer_table(self) -> list[tuple[str, dict]]:
        """Per-layer deltas plus any unscoped remainder; sums to counters."""
        rows = [(lid, dict(d)) for lid, d in self.per_layer]
        if any(self._unscoped.values()):
            rows.append(("(unscoped)", dict(self._unscoped)))
        return rows

    def snapshot(self) -> dict:
        return dict(self.counters)


class _LayerScope:
    def __init__(self, rec: OpRecorder, layer_id: str):
        self.rec = rec
        self.layer_id = layer_id

    def __enter__(self):
        self.rec._stack.append((self.layer_id, _zero_counts()))
        return self.rec

    def __exit__(self, exc_type, exc, tb):
        layer_id, delta = self.rec._stack.pop()
        self.rec.per_layer.append((layer_id, delta))
        return False


@dataclass(frozen=True)
class HeContext:
    """Scheme parameters for one simulated evaluation."""

    poly_degree: int
    slot_count: int
    max_level: int
    scale: float
    scheme: str
    latency_table: dict
    noise_model: bool = False
    _ids: Iterable[int] = field(default_factory=lambda: iter(range(1 << 62)), repr=False, compare=False)

    def fresh_id(self) -> str:
        return f"ct{next(self._ids)}"


@dataclass(frozen=True)
class Ciphertext:
    """Simulated ciphertext: slot vector + remaining level + provenance tag."""

    slots: np.ndarray
    level: int
    scale: float
    id: str
    ctx: HeContext

    def __post_init__(self):
        self.slots.flags.writeable = False


def make_context(
    poly_degree: int,
    max_level: int,
    scale: float,
    scheme: str = "CKKS",
    noise_model: bool = False,
) -> HeContext:
    """Build an evaluation context with N/2 slots and the scheme's latency table."""
    if poly_degree < 8 or poly_degree & (poly_degree - 1):
        raise ParameterError(f"poly_degree must be a power of two >= 8, got {poly_degree}")
    if max_level < 1:
        raise ParameterError(f"max_level must be >= 1, got {max_level}")
    if not scale > 0:
        raise ParameterError(f"scale must be positive, got {scale}")
    scheme = scheme.upper()
    if scheme not in LATENCY_MS:
        raise ParameterError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    table = dict(LATENCY_MS[scheme])
    table.setdefault("Rot", table["Mul_PC"])  # rotations priced like plain multiplies
    return HeContext(
        poly_degree=poly_degree,
        slot_count=poly_degree // 2,
        max_level=max_level,
        scale=float(scale),
        scheme=scheme,
        latency_table=table,
        noise_model=noise_model,
    )


def encode_plain(v: PlainLike, ctx: HeContext) -> np.ndarray:
    """Zero-pad a real vector to the slot width (the plaintext SIMD encoding)."""
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size > ctx.slot_count:
        raise CapacityError(
            f"vector of length {arr.size} exceeds {ctx.slot_count} slots"
        )
    out = np.zeros(ctx.slot_count, dtype=np.float64)
    out[: arr.size] = arr
    return out


def encrypt_vector(v: PlainLike, ctx: HeContext) -> Ciphertext:
    """Encrypt a vector of at most slot_count reals (zero-padded)."""
    slots = encode_plain(v, ctx)
    if not np.all(np.isfinite(slots)):
        raise ParameterError("plaintext vector must contain only finite values")
    return Ciphertext(slots=slots, level=ctx.max_level, scale=ctx.scale, id=ctx.fresh_id(), ctx=ctx)


def decrypt_vector(c: Ciphertext, ctx: HeContext) -> np.ndarray:
    """Read a ciphertext's slots back (never consumes level)."""
    if c.ctx is not ctx:
        raise UsageError("ciphertext does not belong to this context")
    return c.slots.copy()


def _check_pair(a: Ciphertext, b) -> bool:
    """True if b is a ciphertext (after verifying contexts agree)."""
    if isinstance(b, Ciphertext):
        if a.ctx is not b.ctx:
            raise UsageError("operands come from different contexts")
        return True
    return False


def he_add(a: Ciphertext, b, rec: OpRecorder) -> Ciphertext:
    """Slot-wise addition; Add_CC for cipher+cipher, Add_PC for cipher+plain."""
    if _check_pair(a, b):
        rec.bump("Add_CC")
        slots = _ops.ew_add(a.slots, b.slots)
        level = min(a.level, b.level)
    else:
        rec.bump("Add_PC")
        slots = _ops.ew_add(a.slots, encode_plain(b, a.ctx))
        level = a.level
    return Ciphertext(slots=slots, level=level, scale=a.scale, id=a.ctx.fresh_id(), ctx=a.ctx)


def he_mul(a: Ciphertext, b, rec: OpRecorder, *, mask: bool = False) -> Ciphertext:
    """Slot-wise product with rescale: result level = min(levels) - 1.

    With the fixed-point noise model on, the product is rounded to the
    nearest multiple of 1/scale. `mask=True` additionally tags the op in the
    Mul_PC_mask sub-counter (output masking convention is reported separately).
    """
    is_cc = _check_pair(a, b)
    lvl = min(a.level, b.level) if is_cc else a.level
    if lvl < 1:
        layer = rec.current_layer
        where = f" in layer {layer!r}" if layer else ""
        raise DepthBudgetError(
            f"multiplicative depth exhausted{where}: level is 0 "
            f"(context max_level={a.ctx.max_level})"
        )
    other = b.slots if is_cc else encode_plain(b, a.ctx)
    if is_cc:
        rec.bump("Mul_CC")
    else:
        rec.bump("Mul_PC")
        if mask:
            rec.bump("Mul_PC_mask")
    if a.ctx.noise_model:
        slots = _ops.ew_mul_round(a.slots, other, a.ctx.scale)
    else:
        slots = _ops.ew_mul(a.slots, other)
    return Ciphertext(slots=slots, level=lvl - 1, scale=a.scale, id=a.ctx.fresh_id(), ctx=a.ctx)


def he_rotate(c: Ciphertext, r: int, rec: OpRecorder) -> Ciphertext:
    """Cyclic rotation: left by r slots for r > 0, right for r < 0."""
    rec.bump("Rot")
    r = int(r) % c.ctx.slot_count
    slots = _ops.rotate(c.slots, r)
    return Ciphertext(slots=slots, level=c.level, scale=c.scale, id=c.ctx.fresh_id(), ctx=c.ctx)


def he_rotate_mul(c: Ciphertext, r: int, plain: np.ndarray, rec: OpRecorder,
                  *, mask: bool = False) -> Ciphertext:
    """he_mul(he_rotate(c, r), plain) without materializing the rotation.

    Identical semantics and recording (one Rot + one Mul_PC); the fused
    kernel is the hot path of the conv and fc inner loops.
    """
    if c.level < 1:
        layer = rec.current_layer
        where = f" in layer {layer!r}" if layer else ""
        raise DepthBudgetError(
            f"multiplicative depth exhausted{where}: level is 0 "
            f"(context max_level={c.ctx.max_level})"
        )
    rec.bump("Rot")
    rec.bump("Mul_PC")
    if mask:
        rec.bump("Mul_PC_mask")
    r = int(r) % c.ctx.slot_count
    if c.ctx.noise_model:
        slots = _ops.rotate_mul_round(c.slots, r, plain, c.ctx.scale)
    else:
        slots = _ops.rotate_mul(c.slots, r, plain)
    return Ciphertext(slots=slots, level=c.level - 1, scale=c.scale,
                      id=c.ctx.fresh_id(), ctx=c.ctx)
