"""Cost reporting: HE op tallies, latency estimates, and ciphertext-spread
analysis over layer stacks and bi-branch networks.

HEOPs = Add_PC + Add_CC + Mul_PC + Mul_CC. Rotations are tracked and priced
separately (rotation_cost_ms, defaulting to the scheme's Mul_PC constant;
set it to 0 to compare against op tallies that ignore rotations).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .layers import LayerSpec
from .network import BackboneSpec, NetworkSpec, branch_tag
from .sim import HE_OP_KEYS, LATENCY_MS, OpRecorder

ENV_TABLE = "BIBRANCH_LATENCY_TABLE"

TABLE_COLUMNS = ("HEOPs", "Add_CC", "Mul_PC", "Act_C", "Latency(s)", "Amortized Latency(s)")


def latency_table(scheme: str = "CKKS") -> dict:
    """Per-op milliseconds for a scheme; BIBRANCH_LATENCY_TABLE may point to
    a JSON file {scheme: {op: ms}} overriding the built-ins."""
    scheme = scheme.upper()
    tables = LATENCY_MS
    path = os.environ.get(ENV_TABLE)
    if path:
        with open(path) as fh:
            override = json.load(fh)
        tables = {**tables, **{k.upper(): v for k, v in override.items()}}
    if scheme not in tables:
        raise ParameterError(f"no latency table for scheme {scheme!r}")
    table = tables[scheme]
    missing = [k for k in HE_OP_KEYS if k not in table]
    if missing:
        raise ParameterError(f"latency table for {scheme} lacks entries: {missing}")
    if any(table[k] <= 0 for k in HE_OP_KEYS):
        raise ParameterError("latency entries must be positive")
    out = {k: float(table[k]) for k in HE_OP_KEYS}
    out["Rot"] = float(table.get("Rot", table["Mul_PC"]))
    return out


def count_report(rec: OpRecorder) -> dict:
    """Summarize a recorder: totals, HEOP sum, and per-layer breakdown."""
    counts = rec.snapshot()
    heops = sum(counts[k] for k in HE_OP_KEYS)
    per_layer = [
        {"layer": lid, "branch": branch_tag(lid), "counts": delta}
        for lid, delta in rec.layer_table()
    ]
    return {
        "counts": counts,
        "heops": heops,
        "per_layer": per_layer,
    }


def latency_estimate(summary, table: dict, batch: int = 1, *,
                     rotation_cost_ms: float | None = None) -> tuple[float, float]:
    """(latency_s, amortized_s): the dot product of op counts with per-op
    milliseconds, plus rotations at rotation_cost_ms each (defaults to the
    Mul_PC constant). Amortization divides by the batch size; callers pass
    batch=1 for runs that are not slot-batched."""
    if batch < 1:
        raise ParameterError(f"batch must be >= 1, got {batch}")
    counts = summary["counts"] if isinstance(summary, dict) and "counts" in summary else summary
    ms = 0.0
    for key in HE_OP_KEYS:
        ms += counts.get(key, 0) * table[key]
    rot_ms = table["Mul_PC"] if rotation_cost_ms is None else float(rotation_cost_ms)
    ms += counts.get("Rot", 0) * rot_ms
    latency_s = ms / 1000.0
    return latency_s, latency_s / batch


def format_table(rows: list[dict]) -> str:
    """Aligned text table; one row per run, columns in the conventional
    HEOPs / Add_CC / Mul_PC / Act_C / latency order."""
    header = ("Scheme",) + TABLE_COLUMNS
    body = []
    for row in rows:
        body.append((
            row["name"],
            str(row["heops"]),
            str(row["counts"]["Add_CC"]),
            str(row["counts"]["Mul_PC"]),
            str(row["counts"]["Act_C"]),
            f"{row['latency_s']:.3f}",
            f"{row['amortized_s']:.3f}",
        ))
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    for r in body:
        lines.append("  ".join(v.ljust(widths[i]) for i, v in enumerate(r)))
    return "\n".join(lines)


@dataclass(frozen=True)
class SpreadState:
    layer: str
    mask: np.ndarray       # boolean grid of ciphertext-tainted positions
    fraction: float


def _spread_step(mask: np.ndarray, kernel, stride, padding) -> np.ndarray:
    """Output position is tainted iff any input in its window is tainted."""
    h, w = mask.shape
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel {kernel} larger than grid {h}x{w}")
    padded = np.zeros((h + 2 * ph, w + 2 * pw), dtype=bool)
    padded[ph:ph + h, pw:pw + w] = mask
    out = np.zeros((oh, ow), dtype=bool)
    for di in range(kh):
        for dj in range(kw):
            out |= padded[di:di + (oh - 1) * sh + 1:sh, dj:dj + (ow - 1) * sw + 1:sw]
    return out


def spread_stack(initial_mask: np.ndarray, layers: list[LayerSpec]) -> list[SpreadState]:
    """Taint propagation through a single-chain stack. FC taints every
    output as soon as any input is tainted."""
    mask = np.asarray(initial_mask, dtype=bool)
    states = [SpreadState("input", mask, float(mask.mean()))]
    for i, spec in enumerate(layers):
        if spec.kind in ("conv", "sumpool"):
            mask = _spread_step(mask, spec.kernel, spec.stride, spec.padding)
        elif spec.kind == "fc":
            mask = np.full((1, spec.out_channels), bool(mask.any()))
        elif spec.kind in ("square", "relu", "save"):
            pass
        elif spec.kind == "residual":
            pass  # same-branch add; mask unchanged at equal geometry
        states.append(SpreadState(f"{i}.{spec.kind}", mask, float(mask.mean())))
    return states


def full_taint_layer(states: list[SpreadState]) -> int | None:
    """1-based index of the first layer whose grid is fully tainted."""
    for i, st in enumerate(states[1:], start=1):
        if st.fraction >= 1.0:
            return i
    return None


def centered_mask(grid: int, region: int) -> np.ndarray:
    mask = np.zeros((grid, grid), dtype=bool)
    r0 = (grid - region) // 2
    mask[r0:r0 + region, r0:r0 + region] = True
    return mask


def spread_network(net) -> dict:
    """Spread behaviour of a spec.

    Bi-branch: the ciphertext branch is tainted from its (fully sensitive)
    input on; the plaintext branch never is (connections only flow plain ->
    cipher). Single-chain backbone fed with ciphertext: tainted from layer 0.
    """
    if isinstance(net, NetworkSpec):
        seg = np.ones((net.segment_shape[1], net.segment_shape[2]), dtype=bool)
        cipher = spread_stack(seg, list(net.cipher_layers))
        plain0 = np.zeros((net.input_shape[1], net.input_shape[2]), dtype=bool)
        plain = spread_stack(plain0, list(net.plain_layers))
        return {
            "kind": "bi",
            "cipher": [{"layer": s.layer, "fraction": s.fraction} for s in cipher],
            "plain": [{"layer": s.layer, "fraction": s.fraction} for s in plain],
            "plain_max_fraction": max(s.fraction for s in plain),
        }
    if isinstance(net, BackboneSpec):
        mask = np.ones((net.input_shape[1], net.input_shape[2]), dtype=bool)
        states = spread_stack(mask, list(net.layers))
        return {
            "kind": "backbone",
            "layers": [{"layer": s.layer, "fraction": s.fraction} for s in states],
            "full_at": full_taint_layer(states),
        }
    raise ShapeError(f"cannot run spread analysis on {type(net).__name__}")
