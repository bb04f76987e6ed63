"""Bi-branch network assembly and execution.

A network splits its input into a sensitive center segment (encrypted,
processed by the ciphertext branch) and the full image with the center
zeroed and the rest perturbed (processed in the clear by the plaintext
branch). Information flows one way only: after each plaintext conv block,
the feature map is center-cropped to the ciphertext branch's spatial size,
mixed across channels by a learned matrix, and added into the ciphertext
state with plain additions. A two-layer integration head combines both
branches, with one half of its first layer reserved for plaintext-only
neurons.

Execution is recorded per layer so that taint_check can verify no
ciphertext operation was ever attributed to a plaintext-branch layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArchiveError, ShapeError, UsageError
from .layers import (
    LayerSpec,
    SlotGrid,
    compact_grid,
    concat_flat,
    conv_accumulate,
    fc_forward_multi,
    output_mask,
    plain_layer,
    square_act,
    sum_pool,
)
from .packing import PackLayout, pack
from .sim import Ciphertext, HeContext, OpRecorder, he_add, he_mul


@dataclass(frozen=True)
class ConnectionSpec:
    """One plaintext->ciphertext feature injection site."""

    plain_source: int   # take the output of plain_layers[plain_source]
    cipher_insert: int  # add z before cipher_layers[cipher_insert] (len = before head)
    crot: str           # channel-mixing matrix tensor name, (ch_c, ch_p)


@dataclass(frozen=True)
class IntegrationSpec:
    """Two-layer head; first layer splits into plaintext-only and
    fully-connected ciphertext halves of n1/2 neurons each."""

    n1: int
    n2: int
    w_c1: str
    w_p1: str
    w_p1_prime: str
    b1: str
    b1_prime: str
    w_c2: str
    w_p2: str
    b2: str
    activation: str = "square"

    def __post_init__(self):
        if self.n1 % 2:
            raise ShapeError(f"head width n1 must be even, got {self.n1}")


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: tuple[int, int, int]    # (c, h, w)
    segment_shape: tuple[int, int, int]  # (c, h/2, w/2)
    cipher_layers: tuple[LayerSpec, ...]
    plain_layers: tuple[LayerSpec, ...]
    connections: tuple[ConnectionSpec, ...]
    head: IntegrationSpec

    def tensor_names(self) -> list[str]:
        names = []
        for spec in (*self.cipher_layers, *self.plain_layers):
            for n in (spec.weight, spec.bias, spec.proj_weight):
                if n:
                    names.append(n)
        names.extend(c.crot for c in self.connections)
        h = self.head
        names.extend([h.w_c1, h.w_p1, h.w_p1_prime, h.b1, h.b1_prime, h.w_c2, h.w_p2, h.b2])
        return names


@dataclass(frozen=True)
class BackboneSpec:
    """Single-chain reference network (all layers are plaintext layers by
    construction; running it fully encrypted is the comparison baseline)."""

    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    n_classes: int

    def tensor_names(self) -> list[str]:
        names = []
        for spec in self.layers:
            for n in (spec.weight, spec.bias, spec.proj_weight):
                if n:
                    names.append(n)
        return names


@dataclass(frozen=True)
class DecomposedInput:
    """Sensitive center crop (exact) + zero-filled/perturbed full image."""

    sensitive: np.ndarray   # (c, h/2, w/2)
    plain_full: np.ndarray  # (c, h, w); zero on the sensitive region
    region: tuple[int, int, int, int]  # row0, col0, height, width


def decompose_input(image: np.ndarray, noise_sigma: float = 0.1, seed: int = 0) -> DecomposedInput:
    """Split an image into the centered h/2 x w/2 sensitive quarter and the
    perturbed remainder. Deterministic for a given seed."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ShapeError(f"expected (c, h, w) image, got shape {image.shape}")
    c, h, w = image.shape
    if h % 2 or w % 2:
        raise ShapeError(f"image sides must be even, got {h}x{w}")
    hs, ws = h // 2, w // 2
    r0, c0 = (h - hs) // 2, (w - ws) // 2
    sensitive = image[:, r0:r0 + hs, c0:c0 + ws].copy()
    rng = np.random.default_rng(seed)
    plain_full = image + rng.normal(0.0, noise_sigma, size=image.shape) if noise_sigma > 0 else image.copy()
    plain_full[:, r0:r0 + hs, c0:c0 + ws] = 0.0
    return DecomposedInput(sensitive=sensitive, plain_full=plain_full, region=(r0, c0, hs, ws))


def decompose_batch(images: np.ndarray, noise_sigma: float = 0.1, seed: int = 0) -> list[DecomposedInput]:
    """Decompose a (n, c, h, w) batch; one seed stream covers the batch."""
    rng = np.random.default_rng(seed)
    out = []
    for image in np.asarray(images, dtype=np.float64):
        c, h, w = image.shape
        if h % 2 or w % 2:
            raise ShapeError(f"image sides must be even, got {h}x{w}")
        hs, ws = h // 2, w // 2
        r0, c0 = (h - hs) // 2, (w - ws) // 2
        sensitive = image[:, r0:r0 + hs, c0:c0 + ws].copy()
        plain_full = image + rng.normal(0.0, noise_sigma, size=image.shape) if noise_sigma > 0 else image.copy()
        plain_full[:, r0:r0 + hs, c0:c0 + ws] = 0.0
        out.append(DecomposedInput(sensitive, plain_full, (r0, c0, hs, ws)))
    return out


def resize_crop(x_p: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Center crop of every channel to (h_c, w_c); floor offsets on odd gaps."""
    x_p = np.asarray(x_p)
    hc, wc = target
    hp, wp = x_p.shape[-2], x_p.shape[-1]
    if hc > hp or wc > wp:
        raise ShapeError(f"crop target {target} larger than source {hp}x{wp}")
    r0 = (hp - hc) // 2
    c0 = (wp - wc) // 2
    return x_p[..., r0:r0 + hc, c0:c0 + wc]


def channel_rotate(y: np.ndarray, w_crot: np.ndarray) -> np.ndarray:
    """Mix plaintext channels into the ciphertext-branch channel count:
    out channel i = sum_j w_crot[i, j] * y[j]."""
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w_crot, dtype=np.float64)
    if y.shape[-3] != w.shape[1]:
        raise ShapeError(f"channel mismatch: matrix maps {w.shape[1]} channels, tensor has {y.shape[-3]}")
    return np.einsum("kc,...chw->...khw", w, y)


def apply_connection(cts: list[Ciphertext], x_p: np.ndarray, w_crot: np.ndarray,
                     grid: SlotGrid, ctx: HeContext, rec: OpRecorder) -> list[Ciphertext]:
    """Inject plaintext features: crop to the ciphertext grid, channel-mix,
    and add each resulting channel with exactly one Add_PC."""
    z = channel_rotate(resize_crop(x_p, (grid.rows, grid.cols)), w_crot)
    if z.ndim == 3:
        z = z[None]
    if z.shape != (grid.tiles, len(cts), grid.rows, grid.cols):
        raise ShapeError(
            f"connection tensor shape {z.shape} does not match "
            f"{(grid.tiles, len(cts), grid.rows, grid.cols)}"
        )
    anchors = grid.anchors().ravel()
    out = []
    for ch, ct in enumerate(cts):
        vec = np.zeros(ctx.slot_count)
        vec[anchors] = z[:, ch].ravel()
        out.append(he_add(ct, vec, rec))
    return out


class _CipherState:
    """Per-channel ciphertexts plus their shared slot grid."""

    def __init__(self, cts: list[Ciphertext], grid: SlotGrid):
        self.cts = cts
        self.grid = grid

    @property
    def channels(self) -> int:
        return len(self.cts)


def _exec_cipher_layer(state: _CipherState, spec: LayerSpec, weights, ctx, rec,
                       saved: dict) -> _CipherState:
    if spec.kind == "conv":
        w = np.asarray(weights[spec.weight], dtype=np.float64)
        b = np.asarray(weights[spec.bias], dtype=np.float64) if spec.bias else None
        if w.shape[1] != state.channels:
            raise ShapeError(f"conv expects {w.shape[1]} channels, state has {state.channels}")
        new = []
        out_grid = None
        for o in range(w.shape[0]):
            acc = None
            for cin in range(w.shape[1]):
                acc, out_grid = conv_accumulate(state.cts[cin], w[o, cin], state.grid,
                                                spec.stride, spec.padding, ctx, rec, acc)
            masked = he_mul(acc, output_mask(out_grid, ctx.slot_count), rec, mask=True)
            if b is not None:
                masked = he_add(masked, output_mask(out_grid, ctx.slot_count, float(b[o])), rec)
            new.append(masked)
        return _CipherState(new, out_grid)
    if spec.kind == "sumpool":
        new, out_grid = [], None
        for ct in state.cts:
            pooled, out_grid = sum_pool(ct, spec.kernel, spec.stride, state.grid,
                                        ctx, rec, scale=spec.scale)
            new.append(pooled)
        return _CipherState(new, out_grid)
    if spec.kind == "square":
        return _CipherState([square_act(ct, rec) for ct in state.cts], state.grid)
    if spec.kind == "save":
        saved[spec.tag] = state
        return state
    if spec.kind == "residual":
        base = saved[spec.tag]
        if spec.proj_weight is not None:
            pw = np.asarray(weights[spec.proj_weight], dtype=np.float64)
            shortcut = []
            s_grid = None
            for o in range(pw.shape[0]):
                acc = None
                for cin in range(pw.shape[1]):
                    acc, s_grid = conv_accumulate(base.cts[cin], pw[o, cin], base.grid,
                                                  spec.proj_stride, (0, 0), ctx, rec, acc)
                shortcut.append(he_mul(acc, output_mask(s_grid, ctx.slot_count), rec, mask=True))
            base = _CipherState(shortcut, s_grid)
        if base.grid != state.grid:
            raise ShapeError("residual branch grids disagree")
        return _CipherState([he_add(a, b, rec) for a, b in zip(state.cts, base.cts)], state.grid)
    raise UsageError(f"layer kind {spec.kind!r} is not allowed in the ciphertext branch")


def _plain_chain(x: np.ndarray, specs, weights, rec: OpRecorder, prefix: str,
                 upto: int, cache: list) -> list:
    """Evaluate plain layers lazily up to index `upto`, caching outputs."""
    while len(cache) <= upto:
        i = len(cache)
        spec = specs[i]
        prev = cache[-1] if cache else x
        with rec.layer(f"{prefix}.{i}.{spec.kind}"):
            if spec.kind == "save":
                out = prev
            elif spec.kind == "residual":
                base = next(cache[j] for j in range(i - 1, -1, -1)
                            if specs[j].kind == "save" and specs[j].tag == spec.tag)
                if spec.proj_weight is not None:
                    base = plain_layer(base, LayerSpec("conv", kernel=spec.kernel,
                                                       stride=spec.proj_stride,
                                                       weight=spec.proj_weight), weights)
                out = prev + base
            else:
                out = plain_layer(prev, spec, weights)
        cache.append(out)
    return cache


def _flatten_cipher(state: _CipherState, ctx, rec, group_cap: int):
    """Compact every channel, then concatenate channels into as few
    ciphertexts as the per-tile capacity allows. Returns [(ct, width)]."""
    flat_cts = []
    grid = None
    for ct in state.cts:
        fct, grid = compact_grid(ct, state.grid, ctx, rec)
        flat_cts.append(fct)
    per_ch = grid.size
    group = max(1, group_cap // per_ch)
    parts = []
    for start in range(0, len(flat_cts), group):
        chunk = flat_cts[start:start + group]
        ct = concat_flat(chunk, [per_ch] * len(chunk), ctx, rec,
                         tiles=grid.tiles, tile_step=grid.tile_step)
        parts.append((ct, per_ch * len(chunk)))
    return parts, grid


def feature_integrate(x_c_parts, x_p: np.ndarray, head: IntegrationSpec, weights,
                      ctx: HeContext, rec: OpRecorder, *,
                      tiles: int = 1, tile_step: int = 0) -> Ciphertext:
    """Two-layer integration head.

    The plaintext half runs entirely in the clear. The ciphertext half's
    plain summand (W_p1^T x_p + b1, and W_p2^T x_p1 + b2 in the second
    layer) enters as the FC bias vector, i.e. one Add_PC per layer.
    """
    if isinstance(x_c_parts, Ciphertext):
        x_c_parts = [(x_c_parts, None)]
    x_p = np.atleast_2d(np.asarray(x_p, dtype=np.float64))
    half = head.n1 // 2
    with rec.layer("head.plain_half"):
        p1_own = x_p @ weights[head.w_p1_prime] + weights[head.b1_prime]
        x_p1 = _head_act(p1_own, head.activation)
        p1_cross = x_p @ weights[head.w_p1] + weights[head.b1]
        p2_cross = x_p1 @ weights[head.w_p2] + weights[head.b2]
    # split the first-layer cipher weight across the flattened blocks
    w_c1 = np.asarray(weights[head.w_c1], dtype=np.float64)
    if w_c1.shape[1] != half:
        raise ShapeError(f"w_c1 must have {half} columns, got {w_c1.shape[1]}")
    parts, row = [], 0
    for ct, width in x_c_parts:
        width = w_c1.shape[0] - row if width is None else width
        parts.append((ct, w_c1[row:row + width]))
        row += width
    if row != w_c1.shape[0]:
        raise ShapeError(f"flattened cipher width {row} != w_c1 rows {w_c1.shape[0]}")
    with rec.layer("head.fc1"):
        x_c1 = fc_forward_multi(parts, p1_cross, ctx, rec,
                                tiles=tiles, tile_step=tile_step)
    with rec.layer("head.square1"):
        x_c1 = square_act(x_c1, rec)
    with rec.layer("head.fc2"):
        out = fc_forward_multi([(x_c1, np.asarray(weights[head.w_c2], dtype=np.float64))],
                               p2_cross, ctx, rec, tiles=tiles, tile_step=tile_step)
    with rec.layer("head.square2"):
        out = square_act(out, rec)
    return out


def _head_act(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "square":
        return x ** 2
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise UsageError(f"unsupported head activation {kind!r}")


@dataclass
class ForwardResult:
    logits_ct: Ciphertext
    recorder: OpRecorder
    n_outputs: int
    tiles: int
    tile_step: int
    ctx: HeContext

    def decrypt_logits(self) -> np.ndarray:
        from .sim import decrypt_vector

        slots = decrypt_vector(self.logits_ct, self.ctx)
        bases = np.arange(self.tiles) * self.tile_step
        return slots[bases[:, None] + np.arange(self.n_outputs)[None, :]]

    def predictions(self) -> np.ndarray:
        return self.decrypt_logits().argmax(axis=1)


def _check_weights(spec, weights):
    missing = sorted(set(spec.tensor_names()) - set(weights.names()))
    if missing:
        raise ArchiveError(f"weight archive is missing tensors: {', '.join(missing)}")


def _stack_inputs(inputs):
    if isinstance(inputs, DecomposedInput):
        inputs = [inputs]
    sens = np.stack([d.sensitive for d in inputs])
    plain = np.stack([d.plain_full for d in inputs])
    return sens, plain


def forward_bicrypto(net: NetworkSpec, inputs, weights, ctx: HeContext, *,
                     strategy: str = "bhw", schedule: str = "interleaved",
                     rec: OpRecorder | None = None) -> ForwardResult:
    """Run the full bi-branch network on decomposed input(s).

    strategy 'bhw' packs the whole batch per channel ciphertext (the ops
    recorded are then independent of the batch size); 'hw' takes a single
    sample. schedule 'plain-first' evaluates the plaintext branch up front,
    'interleaved' evaluates it on demand — results are bit-identical.
    """
    rec = rec or OpRecorder()
    _check_weights(net, weights)
    sens, plain_full = _stack_inputs(inputs)
    b, c, hs, ws = sens.shape
    if strategy == "hw" and b != 1:
        raise UsageError("hw packing runs one sample per forward pass; loop over samples")
    if strategy not in ("hw", "bhw"):
        raise UsageError(f"unsupported execution strategy {strategy!r}")
    layout = PackLayout(strategy, b, hs, ws, c, ctx.slot_count)
    cts = pack(sens, layout, ctx)
    grid = SlotGrid.from_layout(layout)
    state = _CipherState(cts, grid)

    plain_cache: list = []
    if schedule == "plain-first":
        _plain_chain(plain_full, net.plain_layers, weights, rec, "plain",
                     len(net.plain_layers) - 1, plain_cache)
    elif schedule != "interleaved":
        raise UsageError(f"unknown schedule {schedule!r}")

    by_insert = {}
    for k, conn in enumerate(net.connections):
        by_insert.setdefault(conn.cipher_insert, []).append((k, conn))

    saved: dict = {}
    for i in range(len(net.cipher_layers) + 1):
        for k, conn in by_insert.get(i, ()):
            _plain_chain(plain_full, net.plain_layers, weights, rec, "plain",
                         conn.plain_source, plain_cache)
            x_p = plain_cache[conn.plain_source]
            with rec.layer(f"connect.{k + 1}"):
                state = _CipherState(
                    apply_connection(state.cts, x_p, weights[conn.crot], state.grid, ctx, rec),
                    state.grid,
                )
        if i == len(net.cipher_layers):
            break
        spec = net.cipher_layers[i]
        with rec.layer(f"cipher.{i}.{spec.kind}"):
            state = _exec_cipher_layer(state, spec, weights, ctx, rec, saved)

    _plain_chain(plain_full, net.plain_layers, weights, rec, "plain",
                 len(net.plain_layers) - 1, plain_cache)
    x_p_flat = plain_cache[-1].reshape(b, -1)

    with rec.layer("cipher.flatten"):
        parts, flat_grid = _flatten_cipher(state, ctx, rec, group_cap=hs * ws)
    logits = feature_integrate(parts, x_p_flat, net.head, weights, ctx, rec,
                               tiles=flat_grid.tiles, tile_step=flat_grid.tile_step)
    return ForwardResult(logits, rec, net.head.n2, flat_grid.tiles,
                         flat_grid.tile_step if flat_grid.tiles > 1 else 0, ctx)


def reference_forward(net: NetworkSpec, inputs, weights) -> np.ndarray:
    """Full-precision forward pass with identical wiring; the equivalence
    oracle for the encrypted path. Returns (n, n2) logits."""
    sens, plain_full = _stack_inputs(inputs)
    b = sens.shape[0]

    plain_outs = []
    x = plain_full
    saved = {}
    for spec in net.plain_layers:
        if spec.kind == "save":
            saved[spec.tag] = x
        elif spec.kind == "residual":
            base = saved[spec.tag]
            if spec.proj_weight is not None:
                base = plain_layer(base, LayerSpec("conv", kernel=spec.kernel,
                                                   stride=spec.proj_stride,
                                                   weight=spec.proj_weight), weights)
            x = x + base
        else:
            x = plain_layer(x, spec, weights)
        plain_outs.append(x)

    by_insert = {}
    for conn in net.connections:
        by_insert.setdefault(conn.cipher_insert, []).append(conn)

    xc = sens
    saved = {}
    for i in range(len(net.cipher_layers) + 1):
        for conn in by_insert.get(i, ()):
            z = channel_rotate(resize_crop(plain_outs[conn.plain_source],
                                           (xc.shape[-2], xc.shape[-1])),
                               weights[conn.crot])
            xc = xc + z
        if i == len(net.cipher_layers):
            break
        spec = net.cipher_layers[i]
        if spec.kind == "save":
            saved[spec.tag] = xc
        elif spec.kind == "residual":
            base = saved[spec.tag]
            if spec.proj_weight is not None:
                base = plain_layer(base, LayerSpec("conv", kernel=spec.kernel,
                                                   stride=spec.proj_stride,
                                                   weight=spec.proj_weight), weights)
            xc = xc + base
        else:
            xc = plain_layer(xc, spec, weights)

    x_c = xc.reshape(b, -1)
    x_p = plain_outs[-1].reshape(b, -1)
    h = net.head
    x_p1 = _head_act(x_p @ weights[h.w_p1_prime] + weights[h.b1_prime], h.activation)
    x_c1 = _head_act(x_c @ weights[h.w_c1] + x_p @ weights[h.w_p1] + weights[h.b1], h.activation)
    out = x_c1 @ weights[h.w_c2] + x_p1 @ weights[h.w_p2] + weights[h.b2]
    return _head_act(out, h.activation)


def forward_backbone(spec: BackboneSpec, images: np.ndarray, weights, ctx: HeContext, *,
                     strategy: str = "bhw", rec: OpRecorder | None = None) -> ForwardResult:
    """Run the single-chain network fully encrypted (the no-decomposition
    baseline). Adjacent fc layers with no activation between them are fused
    into one matrix before execution."""
    rec = rec or OpRecorder()
    _check_weights(spec, weights)
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    b, c, h, w = images.shape
    if strategy == "hw" and b != 1:
        raise UsageError("hw packing runs one sample per forward pass")
    layout = PackLayout(strategy, b, h, w, c, ctx.slot_count)
    cts = pack(images, layout, ctx)
    state = _CipherState(cts, SlotGrid.from_layout(layout))

    saved: dict = {}
    layers = list(spec.layers)
    parts = None
    pending: list[LayerSpec] = []
    fc_seq = 0

    def flush_fc(x_parts, pend):
        nonlocal fc_seq
        if not pend:
            return x_parts, None
        W = np.asarray(weights[pend[0].weight], dtype=np.float64)
        k = np.asarray(weights[pend[0].bias], dtype=np.float64) if pend[0].bias else None
        for nxt in pend[1:]:
            W2 = np.asarray(weights[nxt.weight], dtype=np.float64)
            k2 = np.asarray(weights[nxt.bias], dtype=np.float64) if nxt.bias else None
            W = W @ W2
            k = (k @ W2 if k is not None else None)
            if k2 is not None:
                k = k2 if k is None else k + k2
        fc_seq += 1
        row = 0
        blocks = []
        for ct, width in x_parts:
            blocks.append((ct, W[row:row + width]))
            row += width
        if row != W.shape[0]:
            raise ShapeError(f"flattened width {row} != fc input rows {W.shape[0]}")
        with rec.layer(f"net.fc{fc_seq}"):
            out = fc_forward_multi(blocks, k, ctx, rec, tiles=state.grid.tiles,
                                   tile_step=state.grid.tile_step if state.grid.tiles > 1 else 0)
        return [(out, W.shape[1])], W.shape[1]

    n_out = None
    for i, lay in enumerate(layers):
        if lay.kind == "fc":
            if parts is None:
                with rec.layer("net.flatten"):
                    parts, _ = _flatten_cipher(state, ctx, rec, group_cap=h * w)
            pending.append(lay)
            continue
        if parts is not None:
            parts, n_out = flush_fc(parts, pending)
            pending = []
            if lay.kind == "square":
                with rec.layer(f"net.{i}.square"):
                    parts = [(square_act(parts[0][0], rec), parts[0][1])]
                continue
            raise UsageError(f"layer kind {lay.kind!r} cannot follow fc layers")
        with rec.layer(f"net.{i}.{lay.kind}"):
            state = _exec_cipher_layer(state, lay, weights, ctx, rec, saved)
    if pending:
        parts, n_out = flush_fc(parts, pending)

    tiles = state.grid.tiles
    tile_step = state.grid.tile_step if tiles > 1 else 0
    return ForwardResult(parts[0][0], rec, n_out or spec.n_classes, tiles, tile_step, ctx)


def reference_backbone(spec: BackboneSpec, images: np.ndarray, weights) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    x = images
    saved = {}
    for lay in spec.layers:
        if lay.kind == "fc" and x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        if lay.kind == "save":
            saved[lay.tag] = x
        elif lay.kind == "residual":
            base = saved[lay.tag]
            if lay.proj_weight is not None:
                base = plain_layer(base, LayerSpec("conv", kernel=lay.kernel,
                                                   stride=lay.proj_stride,
                                                   weight=lay.proj_weight), weights)
            x = x + base
        else:
            x = plain_layer(x, lay, weights)
    return x


@dataclass(frozen=True)
class TaintVerdict:
    passed: bool
    violations: tuple[str, ...]

    def __str__(self):
        if self.passed:
            return "PASS"
        return "FAIL: ciphertext operations in plaintext layers: " + ", ".join(self.violations)


def branch_tag(layer_id: str) -> str:
    """cipher | plain, from the layer id prefix used by the executors."""
    if layer_id.startswith("plain.") or layer_id.startswith("net.") or layer_id == "head.plain_half":
        return "plain"
    return "cipher"


def taint_check(spec, recorder: OpRecorder) -> TaintVerdict:
    """PASS iff no layer tagged plaintext recorded any ciphertext operation.

    For a bi-branch spec the plaintext branch and the head's plaintext-only
    half must be clean; a single-chain BackboneSpec is all plaintext, so an
    encrypted run of it fails on every op-bearing layer.
    """
    he_keys = ("Add_PC", "Add_CC", "Mul_PC", "Mul_CC", "Rot", "Act_C")
    violations = []
    for layer_id, delta in recorder.layer_table():
        if branch_tag(layer_id) != "plain":
            continue
        if any(delta.get(k, 0) for k in he_keys):
            violations.append(layer_id)
    return TaintVerdict(passed=not violations, violations=tuple(dict.fromkeys(violations)))
