"""Homomorphic layer kernels over packed ciphertexts, plus the exact plain
reference counterparts used by the plaintext branch and the test oracles.

Layout model
------------
A channel lives in one ciphertext. Its pixels sit on an affine slot grid:

    slot(b, i, j) = b*tile_step + origin + i*row_step + j*col_step

Packing starts from a compact grid (origin 0, row_step=w, col_step=1; one
tile per image under bhw). Strided convolutions and pools leave their
outputs anchored at the input position of the window origin, so the grid's
steps scale by the stride and later layers simply adjust their rotation
offsets — no data movement is spent re-compacting between conv/pool layers.

Zero padding never stores border zeros: each tap's plaintext multiplier
carries the kernel weight only at output positions whose tap is inside the
valid input window, which also suppresses cross-tile bleed under bhw
packing. A final mask multiply per output channel keeps only live slots.

The fully connected kernel is the rotation scheme: for weights W (n1 x n2)
it rotates the input once per generalized diagonal (n1+n2-1 rotations),
multiplies each rotation by its diagonal vector, sums the products in pairs
and finishes with one plain bias addition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UsageError
from .packing import PackLayout
from .sim import Ciphertext, HeContext, OpRecorder, he_add, he_mul, he_rotate, he_rotate_mul

Pair = tuple[int, int]


@dataclass(frozen=True)
class SlotGrid:
    """Affine slot placement of one channel (see module docstring)."""

    rows: int
    cols: int
    origin: int = 0
    row_step: int = 0  # 0 -> cols
    col_step: int = 1
    tiles: int = 1
    tile_step: int = 0

    def __post_init__(self):
        if self.row_step == 0:
            object.__setattr__(self, "row_step", self.cols)

    @classmethod
    def from_layout(cls, layout: PackLayout) -> "SlotGrid":
        if layout.strategy == "bhw":
            return cls(rows=layout.height, cols=layout.width,
                       tiles=layout.batch, tile_step=layout.height * layout.width)
        if layout.strategy == "hw":
            return cls(rows=layout.height, cols=layout.width)
        raise UsageError("layer kernels operate on hw or bhw layouts only")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def is_flat(self) -> bool:
        return self.origin == 0 and self.col_step == 1 and self.row_step == self.cols

    def anchors(self) -> np.ndarray:
        """Slot indices, shape (tiles, rows, cols)."""
        base = (self.origin
                + np.arange(self.rows)[:, None] * self.row_step
                + np.arange(self.cols)[None, :] * self.col_step)
        return np.arange(self.tiles)[:, None, None] * self.tile_step + base[None]

    def tile_bases(self) -> np.ndarray:
        return np.arange(self.tiles) * self.tile_step


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a branch. kind: conv | fc | sumpool | square | relu |
    save | residual. Weight/bias are tensor names resolved in an archive."""

    kind: str
    kernel: Pair | None = None
    stride: Pair = (1, 1)
    padding: Pair = (0, 0)
    in_channels: int = 0
    out_channels: int = 0
    weight: str | None = None
    bias: str | None = None
    scale: float = 1.0          # sumpool output scaling (1/k^2 -> average)
    tag: str | None = None      # save/residual bookmark
    proj_weight: str | None = None  # residual projection conv, if any
    proj_stride: Pair = (1, 1)

    def out_hw(self, h: int, w: int) -> Pair:
        if self.kind in ("conv", "sumpool"):
            kh, kw = self.kernel
            oh = (h + 2 * self.padding[0] - kh) // self.stride[0] + 1
            ow = (w + 2 * self.padding[1] - kw) // self.stride[1] + 1
            if oh < 1 or ow < 1:
                raise ShapeError(f"{self.kind} kernel {self.kernel} larger than input {h}x{w}")
            return oh, ow
        return h, w


def _conv_geometry(grid: SlotGrid, kernel: Pair, stride: Pair, padding: Pair):
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    if kh > grid.rows + 2 * ph or kw > grid.cols + 2 * pw:
        raise ShapeError(f"kernel {kernel} larger than padded input {grid.rows}x{grid.cols}")
    if 2 * ph > kh - 1 or 2 * pw > kw - 1:
        raise ShapeError("padding larger than (kernel-1)/2 is not representable in-place")
    oh = (grid.rows + 2 * ph - kh) // sh + 1
    ow = (grid.cols + 2 * pw - kw) // sw + 1
    out = SlotGrid(rows=oh, cols=ow, origin=grid.origin,
                   row_step=grid.row_step * sh, col_step=grid.col_step * sw,
                   tiles=grid.tiles, tile_step=grid.tile_step)
    return oh, ow, out


def _tap_vector(grid: SlotGrid, out: SlotGrid, stride: Pair, padding: Pair,
                di: int, dj: int, value: float, slot_count: int) -> np.ndarray:
    """Plaintext multiplier for tap (di, dj): `value` wherever the tap reads
    a real input pixel, zero where it would fall into padding or a
    neighbouring tile."""
    sh, sw = stride
    ph, pw = padding
    xs = np.arange(out.rows) * sh - ph + di
    ys = np.arange(out.cols) * sw - pw + dj
    vx = (xs >= 0) & (xs < grid.rows)
    vy = (ys >= 0) & (ys < grid.cols)
    vec = np.zeros(slot_count)
    idx = out.anchors()[:, vx][:, :, vy]
    vec[idx.ravel()] = value
    return vec


def conv_accumulate(x: Ciphertext, kernel2d: np.ndarray, grid: SlotGrid,
                    stride: Pair, padding: Pair, ctx: HeContext, rec: OpRecorder,
                    acc: Ciphertext | None = None) -> tuple[Ciphertext, SlotGrid]:
    """Rotate-multiply-accumulate one input channel against one 2-D kernel.

    kh*kw rotations and Mul_PC; kh*kw-1 Add_CC (one more when folding into
    an existing accumulator). No output mask — see conv_forward.
    """
    kh, kw = kernel2d.shape
    _, _, out = _conv_geometry(grid, (kh, kw), stride, padding)
    for di in range(kh):
        for dj in range(kw):
            off = (di - padding[0]) * grid.row_step + (dj - padding[1]) * grid.col_step
            tap = _tap_vector(grid, out, stride, padding, di, dj,
                              float(kernel2d[di, dj]), ctx.slot_count)
            term = he_rotate_mul(x, off, tap, rec)
            acc = term if acc is None else he_add(acc, term, rec)
    return acc, out


def output_mask(out: SlotGrid, slot_count: int, value: float = 1.0) -> np.ndarray:
    vec = np.zeros(slot_count)
    vec[out.anchors().ravel()] = value
    return vec


def conv_forward(x: Ciphertext, f: np.ndarray, grid: SlotGrid | PackLayout,
                 stride: Pair, padding: Pair, ctx: HeContext,
                 rec: OpRecorder) -> tuple[Ciphertext, SlotGrid]:
    """Homomorphic convolution of one packed channel with one kernel.

    Exact cost: kh*kw rotations, kh*kw Mul_PC, kh*kw-1 Add_CC, plus one
    Mul_PC for the output mask. Consumes two levels (tap weights + mask).
    Under bhw the same ops cover every image tile.
    """
    if isinstance(grid, PackLayout):
        grid = SlotGrid.from_layout(grid)
    f = np.asarray(f, dtype=np.float64)
    acc, out = conv_accumulate(x, f, grid, stride, padding, ctx, rec)
    masked = he_mul(acc, output_mask(out, ctx.slot_count), rec, mask=True)
    return masked, out


def sum_pool(x: Ciphertext, window: Pair, stride: Pair, grid: SlotGrid | PackLayout,
             ctx: HeContext, rec: OpRecorder, *, scale: float = 1.0) -> tuple[Ciphertext, SlotGrid]:
    """Weightless pooling: rotate+add over the window, then one mask multiply.

    scale=1 sums the window; scale=1/(k*k) averages it at identical cost.
    k^2 rotations, k^2-1 Add_CC, 1 Mul_PC; consumes a single level.
    """
    if isinstance(grid, PackLayout):
        grid = SlotGrid.from_layout(grid)
    kh, kw = window
    _, _, out = _conv_geometry(grid, window, stride, (0, 0))
    acc = None
    for di in range(kh):
        for dj in range(kw):
            off = di * grid.row_step + dj * grid.col_step
            rotated = he_rotate(x, off, rec)
            acc = rotated if acc is None else he_add(acc, rotated, rec)
    masked = he_mul(acc, output_mask(out, ctx.slot_count, scale), rec, mask=True)
    return masked, out


def square_act(x: Ciphertext, rec: OpRecorder) -> Ciphertext:
    """Slot-wise square: the ciphertext-branch activation. Mul_CC + Act_C."""
    out = he_mul(x, x, rec)
    rec.bump("Act_C")
    return out


def compact_grid(x: Ciphertext, grid: SlotGrid, ctx: HeContext,
                 rec: OpRecorder) -> tuple[Ciphertext, SlotGrid]:
    """Re-pack a strided grid into a contiguous block per tile.

    Needed once per network, at the conv->FC boundary: the FC rotation
    scheme wants its n1 inputs back to back. Two rotate+mask+add stages
    (column groups, then row groups) cost rows+cols rotations and Mul_PC and
    rows+cols-2 Add_CC per channel; a no-op on already-flat grids.
    """
    if grid.is_flat:
        return x, grid
    tiles = grid.tile_bases()[:, None]
    if grid.col_step != 1:
        acc = None
        rows_idx = grid.origin + np.arange(grid.rows)[:, None] * grid.row_step
        for j in range(grid.cols):
            vec = np.zeros(ctx.slot_count)
            vec[(tiles[:, :, None] + rows_idx[None] + j).ravel()] = 1.0
            term = he_rotate_mul(x, j * (grid.col_step - 1), vec, rec, mask=True)
            acc = term if acc is None else he_add(acc, term, rec)
        x = acc
        grid = SlotGrid(rows=grid.rows, cols=grid.cols, origin=grid.origin,
                        row_step=grid.row_step, col_step=1,
                        tiles=grid.tiles, tile_step=grid.tile_step)
    if not grid.is_flat:
        acc = None
        cols_idx = np.arange(grid.cols)
        for i in range(grid.rows):
            vec = np.zeros(ctx.slot_count)
            vec[(tiles[:, :, None] + i * grid.cols + cols_idx[None, None, :]).ravel()] = 1.0
            term = he_rotate_mul(x, grid.origin + i * (grid.row_step - grid.cols),
                                 vec, rec, mask=True)
            acc = term if acc is None else he_add(acc, term, rec)
        x = acc
        grid = SlotGrid(rows=grid.rows, cols=grid.cols,
                        tiles=grid.tiles, tile_step=grid.tile_step)
    return x, grid


def concat_flat(cts: list[Ciphertext], sizes: list[int], ctx: HeContext,
                rec: OpRecorder, *, tiles: int = 1, tile_step: int = 0) -> Ciphertext:
    """Concatenate flat per-tile blocks: block c moves to offset sum(sizes[:c]).

    Inputs must be zero outside their block (always true after compaction or
    masking), so this is len-1 rotations and len-1 Add_CC, no masks.
    """
    if tiles > 1 and sum(sizes) > tile_step:
        raise ShapeError(
            f"concatenated width {sum(sizes)} exceeds tile capacity {tile_step}"
        )
    acc = cts[0]
    offset = sizes[0]
    for ct, size in zip(cts[1:], sizes[1:]):
        acc = he_add(acc, he_rotate(ct, -offset, rec), rec)
        offset += size
    return acc


def fc_forward_multi(parts: list[tuple[Ciphertext, np.ndarray]], k,
                     ctx: HeContext, rec: OpRecorder, *,
                     tiles: int = 1, tile_step: int = 0, base: int = 0) -> Ciphertext:
    """Rotation-scheme FC over one or more flat input blocks.

    Each part (x, W) holds n1_g inputs at [tile+base, tile+base+n1_g) and
    contributes n1_g+n2-1 rotations and Mul_PC (one per generalized diagonal
    of W). All products are summed in one pairwise tree, then the bias (a
    plain n2 vector, or a per-tile (tiles, n2) matrix) lands with one Add_PC.
    Outputs appear at [tile+base, tile+base+n2). Consumes one level.
    """
    n2 = parts[0][1].shape[1]
    offs = np.arange(tiles) * tile_step + base
    t = np.arange(n2)
    products = []
    for x, W in parts:
        n1 = W.shape[0]
        if W.shape[1] != n2:
            raise ShapeError("all weight blocks must share the output width")
        for d in range(n1 - 1, -n2, -1):
            q = t + d
            valid = (q >= 0) & (q < n1)
            vec = np.zeros(ctx.slot_count)
            vec[(offs[:, None] + t[valid][None, :]).ravel()] = np.tile(W[q[valid], t[valid]], tiles)
            products.append(he_rotate_mul(x, d, vec, rec))
    while len(products) > 1:
        nxt = [he_add(products[i], products[i + 1], rec)
               for i in range(0, len(products) - 1, 2)]
        if len(products) % 2:
            nxt.append(products[-1])
        products = nxt
    out = products[0]
    if k is not None:
        karr = np.asarray(k, dtype=np.float64)
        if karr.ndim == 1:
            karr = np.broadcast_to(karr, (tiles, n2))
        vec = np.zeros(ctx.slot_count)
        vec[(offs[:, None] + t[None, :]).ravel()] = karr.ravel()
        out = he_add(out, vec, rec)
    return out


def fc_forward(x: Ciphertext, W: np.ndarray, k, ctx: HeContext, rec: OpRecorder,
               *, tiles: int = 1, tile_step: int = 0, base: int = 0) -> Ciphertext:
    """Fully connected layer x^T W + k for n1 values packed hw-style.

    Exactly n1+n2-1 rotations and Mul_PC, n1+n2-2 Add_CC, 1 Add_PC.
    """
    return fc_forward_multi([(x, np.asarray(W, dtype=np.float64))], k, ctx, rec,
                            tiles=tiles, tile_step=tile_step, base=base)


# --- plain reference ops (full precision; also the test oracle surface) ---

def plain_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
               stride: Pair = (1, 1), padding: Pair = (0, 0)) -> np.ndarray:
    """Dense conv on (..., c, h, w) with weights (o, c, kh, kw)."""
    single = x.ndim == 3
    if single:
        x = x[None]
    B, C, H, Wd = x.shape
    O, C2, KH, KW = w.shape
    if C != C2:
        raise ShapeError(f"conv expects {C2} input channels, got {C}")
    sh, sw = stride
    ph, pw = padding
    oh = (H + 2 * ph - KH) // sh + 1
    ow = (Wd + 2 * pw - KW) // sw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel ({KH},{KW}) larger than input {H}x{Wd}")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((B, O, oh, ow))
    for di in range(KH):
        for dj in range(KW):
            patch = xp[:, :, di:di + (oh - 1) * sh + 1:sh, dj:dj + (ow - 1) * sw + 1:sw]
            out += np.einsum("bchw,oc->bohw", patch, w[:, :, di, dj])
    if b is not None:
        out += np.asarray(b)[None, :, None, None]
    return out[0] if single else out


def plain_sum_pool(x: np.ndarray, window: Pair, stride: Pair, scale: float = 1.0) -> np.ndarray:
    single = x.ndim == 3
    if single:
        x = x[None]
    B, C, H, W = x.shape
    kh, kw = window
    sh, sw = stride
    oh = (H - kh) // sh + 1
    ow = (W - kw) // sw + 1
    out = np.zeros((B, C, oh, ow))
    for di in range(kh):
        for dj in range(kw):
            out += x[:, :, di:di + (oh - 1) * sh + 1:sh, dj:dj + (ow - 1) * sw + 1:sw]
    out *= scale
    return out[0] if single else out


def plain_fc(x: np.ndarray, W: np.ndarray, k: np.ndarray | None) -> np.ndarray:
    out = np.asarray(x) @ np.asarray(W)
    if k is not None:
        out = out + np.asarray(k)
    return out


def plain_square(x: np.ndarray) -> np.ndarray:
    return np.asarray(x) ** 2


def plain_relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x), 0.0)


def plain_layer(x: np.ndarray, spec: LayerSpec, weights=None) -> np.ndarray:
    """Reference evaluation of one LayerSpec (bit-identical across reruns)."""
    if spec.kind == "conv":
        w = weights[spec.weight]
        b = weights[spec.bias] if spec.bias else None
        return plain_conv(x, w, b, spec.stride, spec.padding)
    if spec.kind == "sumpool":
        return plain_sum_pool(x, spec.kernel, spec.stride, spec.scale)
    if spec.kind == "fc":
        w = weights[spec.weight]
        b = weights[spec.bias] if spec.bias else None
        return plain_fc(x, w, b)
    if spec.kind == "square":
        return plain_square(x)
    if spec.kind == "relu":
        return plain_relu(x)
    raise UsageError(f"plain_layer cannot evaluate kind {spec.kind!r}")
