"""Architecture catalog: the concrete bi-branch layouts the engine executes
and their single-chain baselines, with shape validation and level budgets.

Declared layouts
----------------
cnn3 (28x28x1 inputs, 14x14 segment)
    branch: conv 5x5, stride 2, valid, 5 maps -> activation.
    head: 100 first-layer neurons (50 plaintext-only + 50 ciphertext), 10 out.
    baseline: same conv -> square -> 720->100 -> 100->10 dense pair with no
    activation between the dense layers (the executor fuses them).

cnn11 (32x32x3 inputs, 16x16 segment)
    branch: [conv3x3 x2, avg-pool 2x2] x3 with 32/64/128 maps (pooling is a
    sum pool with a 1/4-scaled mask); head 256 (128+128) -> 10.

vgg16 / resnet18 (32x32x3, 16x16 segment)
    catalog entries for shape checking and cost exploration; resnet uses
    save/residual entries with projection shortcuts. The ciphertext branch
    of vgg16 drops the fifth pool (its grid is already 1x1).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ShapeError, UsageError
from .layers import LayerSpec, SlotGrid
from .network import BackboneSpec, ConnectionSpec, IntegrationSpec, NetworkSpec

ARCH_NAMES = ("cnn3", "cnn11", "vgg16", "resnet18")


@dataclass(frozen=True)
class ArchBundle:
    name: str
    bi: NetworkSpec
    backbone: BackboneSpec
    image_shape: tuple[int, int, int]
    segment_shape: tuple[int, int, int]


def _conv(prefix, k, cin, cout, stride=(1, 1), padding=(0, 0), bias=True):
    return LayerSpec("conv", kernel=(k, k), stride=stride, padding=padding,
                     in_channels=cin, out_channels=cout,
                     weight=f"{prefix}.weight", bias=f"{prefix}.bias" if bias else None)


def _cnn3() -> ArchBundle:
    def branch(prefix, act):
        return (
            _conv(f"{prefix}.conv1", 5, 1, 5, stride=(2, 2)),
            LayerSpec(act),
        )

    head = IntegrationSpec(
        n1=100, n2=10,
        w_c1="head.w_c1", w_p1="head.w_p1", w_p1_prime="head.w_p1_prime",
        b1="head.b1", b1_prime="head.b1_prime",
        w_c2="head.w_c2", w_p2="head.w_p2", b2="head.b2",
    )
    bi = NetworkSpec(
        name="cnn3",
        input_shape=(1, 28, 28),
        segment_shape=(1, 14, 14),
        cipher_layers=branch("cipher", "square"),
        plain_layers=branch("plain", "relu"),
        connections=(ConnectionSpec(plain_source=1, cipher_insert=2, crot="connect.1.w_crot"),),
        head=head,
    )
    backbone = BackboneSpec(
        name="cnn3",
        input_shape=(1, 28, 28),
        layers=(
            _conv("conv1", 5, 1, 5, stride=(2, 2)),
            LayerSpec("square"),
            LayerSpec("fc", in_channels=720, out_channels=100, weight="fc1.weight", bias="fc1.bias"),
            LayerSpec("fc", in_channels=100, out_channels=10, weight="fc2.weight", bias="fc2.bias"),
        ),
        n_classes=10,
    )
    return ArchBundle("cnn3", bi, backbone, (1, 28, 28), (1, 14, 14))


def _vgg_like_branch(prefix, act, cfg, in_ch, drop_last_pool=False):
    """conv stacks separated by 2x2 average pools; cfg like (32, 32, 'M', ...)."""
    layers = []
    sites = []  # indices: (source index of the activation, insert-before index)
    conv_id = 0
    ch = in_ch
    for pos, item in enumerate(cfg):
        if item == "M":
            if drop_last_pool and pos == len(cfg) - 1:
                continue
            layers.append(LayerSpec("sumpool", kernel=(2, 2), stride=(2, 2), scale=0.25))
            continue
        conv_id += 1
        layers.append(_conv(f"{prefix}conv{conv_id}", 3, ch, item, padding=(1, 1)))
        layers.append(LayerSpec(act))
        sites.append((len(layers) - 1, len(layers)))
        ch = item
    return tuple(layers), sites, ch


def _stacked(name, cfg, head_half, image_shape=(3, 32, 32), drop_last_pool_cipher=False):
    c = image_shape[0]
    cipher_layers, sites, ch = _vgg_like_branch("cipher.", "square", cfg, c,
                                                drop_last_pool=drop_last_pool_cipher)
    plain_layers, plain_sites, _ = _vgg_like_branch("plain.", "relu", cfg, c)
    conns = tuple(
        ConnectionSpec(plain_source=ps, cipher_insert=ci, crot=f"connect.{k + 1}.w_crot")
        for k, ((ps, _), (_, ci)) in enumerate(zip(plain_sites, sites))
    )
    head = IntegrationSpec(
        n1=2 * head_half, n2=10,
        w_c1="head.w_c1", w_p1="head.w_p1", w_p1_prime="head.w_p1_prime",
        b1="head.b1", b1_prime="head.b1_prime",
        w_c2="head.w_c2", w_p2="head.w_p2", b2="head.b2",
    )
    seg = (c, image_shape[1] // 2, image_shape[2] // 2)
    bi = NetworkSpec(name=name, input_shape=image_shape, segment_shape=seg,
                     cipher_layers=cipher_layers, plain_layers=plain_layers,
                     connections=conns, head=head)
    fixed, _, ch = _vgg_like_branch("", "square", cfg, c)
    shapes = _walk_shapes(fixed, image_shape)
    flat = shapes[-1][0] * shapes[-1][1] * shapes[-1][2]
    backbone = BackboneSpec(
        name=name, input_shape=image_shape,
        layers=fixed + (
            LayerSpec("fc", in_channels=flat, out_channels=2 * head_half,
                      weight="fc1.weight", bias="fc1.bias"),
            LayerSpec("square"),
            LayerSpec("fc", in_channels=2 * head_half, out_channels=10,
                      weight="fc2.weight", bias="fc2.bias"),
        ),
        n_classes=10,
    )
    return ArchBundle(name, bi, backbone, image_shape, seg)


def _cnn11() -> ArchBundle:
    return _stacked("cnn11", (32, 32, "M", 64, 64, "M", 128, 128, "M"), head_half=128)


def _vgg16() -> ArchBundle:
    cfg = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
           512, 512, 512, "M", 512, 512, 512, "M")
    return _stacked("vgg16", cfg, head_half=256, drop_last_pool_cipher=True)


def _resnet_branch(prefix, act):
    layers = []
    sites = []
    conv_id = 0
    proj_id = 0

    def add_conv(cin, cout, stride):
        nonlocal conv_id
        conv_id += 1
        layers.append(_conv(f"{prefix}conv{conv_id}", 3, cin, cout,
                            stride=stride, padding=(1, 1)))
        layers.append(LayerSpec(act))
        sites.append((len(layers) - 1, len(layers)))

    add_conv(3, 64, (1, 1))  # stem
    ch = 64
    for width, stride in ((64, (1, 1)), (128, (2, 2)), (256, (2, 2)), (512, (2, 2))):
        tag = f"blk{width}"
        layers.append(LayerSpec("save", tag=tag))
        add_conv(ch, width, stride)
        add_conv(width, width, (1, 1))
        if stride != (1, 1) or ch != width:
            proj_id += 1
            layers.append(LayerSpec("residual", kernel=(3, 3), tag=tag,
                                    proj_weight=f"{prefix}proj{proj_id}.weight",
                                    proj_stride=stride))
        else:
            layers.append(LayerSpec("residual", tag=tag))
        ch = width
    return tuple(layers), sites, ch


def _resnet18() -> ArchBundle:
    cipher_layers, sites, ch = _resnet_branch("cipher.", "square")
    plain_layers, plain_sites, _ = _resnet_branch("plain.", "relu")
    conns = tuple(
        ConnectionSpec(plain_source=ps, cipher_insert=ci, crot=f"connect.{k + 1}.w_crot")
        for k, ((ps, _), (_, ci)) in enumerate(zip(plain_sites, sites))
    )
    head = IntegrationSpec(
        n1=512, n2=10,
        w_c1="head.w_c1", w_p1="head.w_p1", w_p1_prime="head.w_p1_prime",
        b1="head.b1", b1_prime="head.b1_prime",
        w_c2="head.w_c2", w_p2="head.w_p2", b2="head.b2",
    )
    bi = NetworkSpec(name="resnet18", input_shape=(3, 32, 32), segment_shape=(3, 16, 16),
                     cipher_layers=cipher_layers, plain_layers=plain_layers,
                     connections=conns, head=head)
    bb_layers, _, _ = _resnet_branch("", "square")
    shapes = _walk_shapes(bb_layers, (3, 32, 32))
    flat = shapes[-1][0] * shapes[-1][1] * shapes[-1][2]
    backbone = BackboneSpec(
        name="resnet18", input_shape=(3, 32, 32),
        layers=bb_layers + (
            LayerSpec("fc", in_channels=flat, out_channels=512,
                      weight="fc1.weight", bias="fc1.bias"),
            LayerSpec("square"),
            LayerSpec("fc", in_channels=512, out_channels=10,
                      weight="fc2.weight", bias="fc2.bias"),
        ),
        n_classes=10,
    )
    return ArchBundle("resnet18", bi, backbone, (3, 32, 32), (3, 16, 16))


_BUILDERS = {"cnn3": _cnn3, "cnn11": _cnn11, "vgg16": _vgg16, "resnet18": _resnet18}


def get(name: str) -> ArchBundle:
    try:
        builder = _BUILDERS[name.lower()]
    except KeyError:
        raise UsageError(f"unknown architecture {name!r}; choose from {ARCH_NAMES}") from None
    return builder()


def _walk_shapes(layers, input_shape) -> list[tuple[int, int, int]]:
    """Shape after every layer entry; validates feasibility on the way."""
    c, h, w = input_shape
    shapes = []
    saved = {}
    for spec in layers:
        if spec.kind == "conv":
            if spec.in_channels != c:
                raise ShapeError(f"{spec.weight}: expects {spec.in_channels} channels, got {c}")
            h, w = spec.out_hw(h, w)
            c = spec.out_channels
        elif spec.kind == "sumpool":
            h, w = spec.out_hw(h, w)
        elif spec.kind == "save":
            saved[spec.tag] = (c, h, w)
        elif spec.kind == "residual":
            base = saved[spec.tag]
            if spec.proj_weight is None and base != (c, h, w):
                raise ShapeError(f"residual {spec.tag}: {base} vs {(c, h, w)}")
        elif spec.kind == "fc":
            if spec.in_channels != c * h * w:
                raise ShapeError(
                    f"{spec.weight}: expects {spec.in_channels} inputs, got {c * h * w}"
                )
            c, h, w = spec.out_channels, 1, 1
        shapes.append((c, h, w))
    return shapes


def branch_shapes(net: NetworkSpec) -> dict:
    """Layer-by-layer shapes of both branches plus head widths; raises on
    any inconsistency (connection targets, channel mixes, head dims)."""
    cipher = _walk_shapes(net.cipher_layers, net.segment_shape)
    plain = _walk_shapes(net.plain_layers, net.input_shape)
    for conn in net.connections:
        src_c, src_h, src_w = plain[conn.plain_source]
        tgt = cipher[conn.cipher_insert - 1] if conn.cipher_insert else net.segment_shape
        if src_h < tgt[1] or src_w < tgt[2]:
            raise ShapeError(
                f"connection at cipher index {conn.cipher_insert}: plain map "
                f"{src_h}x{src_w} smaller than cipher target {tgt[1]}x{tgt[2]}"
            )
    n_c = cipher[-1][0] * cipher[-1][1] * cipher[-1][2]
    n_p = plain[-1][0] * plain[-1][1] * plain[-1][2]
    return {"cipher": cipher, "plain": plain, "n_c": n_c, "n_p": n_p,
            "head": (net.head.n1, net.head.n2)}


def crot_shapes(net: NetworkSpec) -> dict[str, tuple[int, int]]:
    """Expected (ch_c, ch_p) per channel-mixing matrix."""
    cipher = _walk_shapes(net.cipher_layers, net.segment_shape)
    plain = _walk_shapes(net.plain_layers, net.input_shape)
    out = {}
    for conn in net.connections:
        ch_p = plain[conn.plain_source][0]
        ch_c = cipher[conn.cipher_insert - 1][0] if conn.cipher_insert else net.segment_shape[0]
        out[conn.crot] = (ch_c, ch_p)
    return out


def required_levels(bundle_or_net, segment=True) -> int:
    """Multiplicative depth of the compiled ciphertext path.

    conv: 2 (tap weights + mask); pool: 1; square: 1; flatten compaction:
    up to 2 when the final grid is strided; head: fc+square twice.
    """
    if isinstance(bundle_or_net, ArchBundle):
        return max(required_levels(bundle_or_net.bi),
                   required_levels(bundle_or_net.backbone))
    net = bundle_or_net
    if isinstance(net, NetworkSpec):
        layers = net.cipher_layers
        shape = net.segment_shape
        head_cost = 4  # fc, square, fc, square
    else:
        layers = net.layers
        shape = net.input_shape
        head_cost = 0
    grid = SlotGrid(rows=shape[1], cols=shape[2])
    depth = 0
    saved: dict = {}
    fc_pending = False
    for spec in layers:
        if spec.kind == "conv":
            depth += 2
            oh, ow = spec.out_hw(grid.rows, grid.cols)
            grid = SlotGrid(rows=oh, cols=ow, origin=grid.origin,
                            row_step=grid.row_step * spec.stride[0],
                            col_step=grid.col_step * spec.stride[1])
        elif spec.kind == "sumpool":
            depth += 1
            oh, ow = spec.out_hw(grid.rows, grid.cols)
            grid = SlotGrid(rows=oh, cols=ow, origin=grid.origin,
                            row_step=grid.row_step * spec.stride[0],
                            col_step=grid.col_step * spec.stride[1])
        elif spec.kind == "square":
            depth += 1
        elif spec.kind == "save":
            saved[spec.tag] = depth
        elif spec.kind == "residual":
            proj = saved[spec.tag] + (2 if spec.proj_weight else 0)
            depth = max(depth, proj)
        elif spec.kind == "fc":
            if not fc_pending:
                depth += (0 if grid.is_flat else 2) + 1  # compaction + fused fc
                fc_pending = True
        elif spec.kind == "relu":
            raise UsageError("relu has no homomorphic kernel")
    if head_cost:
        depth += (0 if grid.is_flat else 2) + head_cost
    return depth


def default_context_params(bundle: ArchBundle, poly_degree: int = 1 << 14,
                           scale: float = float(2 ** 30)) -> dict:
    """Context parameters sized for the bundle: depth budget + one spare."""
    return {
        "poly_degree": poly_degree,
        "max_level": required_levels(bundle) + 1,
        "scale": scale,
    }
