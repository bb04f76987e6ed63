"""Teacher and two-branch student models.

The student mirrors the inference engine's catalog exactly: same layer
shapes, center-crop + channel-mix connections added right after each conv
activation pair, a split integration head whose matrices are stored
input-major (n_in, n_out), squared activations on the ciphertext side and
in the head, ReLU on the plaintext side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

Item = tuple  # ("conv", out_ch, kernel, stride, pad) or "M" (2x2 average pool)


@dataclass(frozen=True)
class ArchLayout:
    name: str
    image_shape: tuple[int, int, int]
    cfg: tuple
    head_half: int
    n_classes: int = 10
    drop_last_pool_cipher: bool = False


LAYOUTS = {
    "cnn3": ArchLayout("cnn3", (1, 28, 28), (("conv", 5, 5, 2, 0),), head_half=50),
    "cnn11": ArchLayout("cnn11", (3, 32, 32),
                        (("conv", 32, 3, 1, 1), ("conv", 32, 3, 1, 1), "M",
                         ("conv", 64, 3, 1, 1), ("conv", 64, 3, 1, 1), "M",
                         ("conv", 128, 3, 1, 1), ("conv", 128, 3, 1, 1), "M"),
                        head_half=128),
    "vgg16": ArchLayout("vgg16", (3, 32, 32),
                        (("conv", 64, 3, 1, 1), ("conv", 64, 3, 1, 1), "M",
                         ("conv", 128, 3, 1, 1), ("conv", 128, 3, 1, 1), "M",
                         ("conv", 256, 3, 1, 1), ("conv", 256, 3, 1, 1), ("conv", 256, 3, 1, 1), "M",
                         ("conv", 512, 3, 1, 1), ("conv", 512, 3, 1, 1), ("conv", 512, 3, 1, 1), "M",
                         ("conv", 512, 3, 1, 1), ("conv", 512, 3, 1, 1), ("conv", 512, 3, 1, 1), "M"),
                        head_half=256, drop_last_pool_cipher=True),
}


def layout_for(arch: str) -> ArchLayout:
    try:
        return LAYOUTS[arch.lower()]
    except KeyError:
        raise NotImplementedError(
            f"no student layout for {arch!r}; desk-scale training covers {tuple(LAYOUTS)}"
        ) from None


def center_crop(x: torch.Tensor, target_hw) -> torch.Tensor:
    th, tw = target_hw
    h, w = x.shape[-2], x.shape[-1]
    r0, c0 = (h - th) // 2, (w - tw) // 2
    return x[..., r0:r0 + th, c0:c0 + tw]


def pad_into_frame(x: torch.Tensor, frame_hw) -> torch.Tensor:
    """Place x centered in a zero frame of (H, W); floor offsets."""
    fh, fw = frame_hw
    h, w = x.shape[-2], x.shape[-1]
    if h > fh or w > fw:
        raise ValueError(f"cannot pad {h}x{w} into smaller frame {fh}x{fw}")
    r0, c0 = (fh - h) // 2, (fw - w) // 2
    out = x.new_zeros(*x.shape[:-2], fh, fw)
    out[..., r0:r0 + h, c0:c0 + w] = x
    return out


def _conv_items(cfg):
    return [item for item in cfg if item != "M"]


class _Branch(nn.Module):
    """One branch: convs and pools per the layout; activation chosen by side."""

    def __init__(self, cfg, in_ch, square: bool, drop_last_pool: bool):
        super().__init__()
        self.cfg = cfg
        self.square = square
        self.drop_last_pool = drop_last_pool
        convs = []
        ch = in_ch
        for item in cfg:
            if item == "M":
                continue
            _, out_ch, k, s, p = item
            convs.append(nn.Conv2d(ch, out_ch, k, stride=s, padding=p))
            ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.out_channels = ch

    def act(self, x):
        return x * x if self.square else torch.relu(x)


class BiBranchNet(nn.Module):
    """Ciphertext branch (on the sensitive center crop) + plaintext branch
    (on the zero-filled full image) + one-way connections + split head."""

    def __init__(self, arch: str):
        super().__init__()
        layout = layout_for(arch)
        self.layout = layout
        c, h, w = layout.image_shape
        self.cipher = _Branch(layout.cfg, c, square=True,
                              drop_last_pool=layout.drop_last_pool_cipher)
        self.plain = _Branch(layout.cfg, c, square=False, drop_last_pool=False)
        # one channel-mixing matrix per conv pair; uniform average start
        self.crots = nn.ParameterList(
            nn.Parameter(torch.full((item[1], item[1]), 1.0 / item[1]))
            for item in _conv_items(layout.cfg)
        )

        n_c, n_p = self._flat_widths()
        half, n2 = layout.head_half, layout.n_classes
        self.n_c, self.n_p, self.n1, self.n2 = n_c, n_p, 2 * half, n2

        def mat(n_in, n_out):
            return nn.Parameter(torch.randn(n_in, n_out) / math.sqrt(n_in))

        self.w_c1 = mat(n_c, half)
        self.w_p1 = mat(n_p, half)
        self.w_p1_prime = mat(n_p, half)
        self.b1 = nn.Parameter(torch.zeros(half))
        self.b1_prime = nn.Parameter(torch.zeros(half))
        self.w_c2 = mat(half, n2)
        self.w_p2 = mat(half, n2)
        self.b2 = nn.Parameter(torch.zeros(n2))

    def _flat_widths(self):
        c, h, w = self.layout.image_shape
        with torch.no_grad():
            sens = torch.zeros(1, c, h // 2, w // 2)
            plain = torch.zeros(1, c, h, w)
            xc, xp = self.branch_outputs(sens, plain, include_boundary=True)
        return xc.numel(), xp.numel()

    def branch_outputs(self, sens, plain, include_boundary=True):
        """Run both branches with interleaved connections.

        include_boundary=False skips a connection that would land after the
        final ciphertext layer (the head-input addition), which is the
        branch-output convention used by the representation-matching loss.
        """
        xc, xp = sens, plain
        conv_i = 0
        items = list(self.layout.cfg)
        for pos, item in enumerate(items):
            if item == "M":
                xp = torch.nn.functional.avg_pool2d(xp, 2)
                if not (self.cipher.drop_last_pool and pos == len(items) - 1):
                    xc = torch.nn.functional.avg_pool2d(xc, 2)
                continue
            xc = self.cipher.act(self.cipher.convs[conv_i](xc))
            xp = self.plain.act(self.plain.convs[conv_i](xp))
            at_boundary = True
            for p in range(pos + 1, len(items)):
                if (items[p] == "M" and self.cipher.drop_last_pool
                        and p == len(items) - 1):
                    continue  # the cipher branch skips this pool
                at_boundary = False
                break
            if include_boundary or not at_boundary:
                z = torch.einsum("kc,bchw->bkhw",
                                 self.crots[conv_i],
                                 center_crop(xp, xc.shape[-2:]))
                xc = xc + z
            conv_i += 1
        return xc, xp

    def head(self, xc_flat, xp_flat):
        xp1 = (xp_flat @ self.w_p1_prime + self.b1_prime) ** 2
        xc1 = (xc_flat @ self.w_c1 + xp_flat @ self.w_p1 + self.b1) ** 2
        out = xc1 @ self.w_c2 + xp1 @ self.w_p2 + self.b2
        return out ** 2

    def forward(self, sens, plain):
        xc, xp = self.branch_outputs(sens, plain, include_boundary=True)
        return self.head(xc.flatten(1), xp.flatten(1))


class Teacher(nn.Module):
    """Conventional network on whole images: the layout's conv stack with
    ReLU, then two dense layers. tap() exposes the representation whose
    shape matches the plaintext branch output."""

    def __init__(self, arch: str):
        super().__init__()
        layout = layout_for(arch)
        self.layout = layout
        c, h, w = layout.image_shape
        self.stack = _Branch(layout.cfg, c, square=False, drop_last_pool=False)
        with torch.no_grad():
            flat = self._stack_forward(torch.zeros(1, c, h, w)).numel()
        self.fc1 = nn.Linear(flat, 2 * layout.head_half)
        self.fc2 = nn.Linear(2 * layout.head_half, layout.n_classes)
        self.tap_index = len(layout.cfg)

    def _stack_forward(self, x):
        conv_i = 0
        for item in self.layout.cfg:
            if item == "M":
                x = torch.nn.functional.avg_pool2d(x, 2)
            else:
                x = torch.relu(self.stack.convs[conv_i](x))
                conv_i += 1
        return x

    def tap(self, x):
        return self._stack_forward(x)

    def forward(self, x):
        x = self._stack_forward(x).flatten(1)
        return self.fc2(torch.relu(self.fc1(x)))


def build_student(arch: str) -> BiBranchNet:
    return BiBranchNet(arch)


def build_teacher(arch: str) -> Teacher:
    return Teacher(arch)
