"""Two-stage distillation.

Stage 1 trains the two branches so that the ciphertext-branch output,
zero-padded into the plaintext frame and added to the plaintext-branch
output, matches the teacher's intermediate representation (squared L2).
Stage 2 trains the whole student on the true labels plus a softened
cross-entropy against the teacher's logits:

    loss = H(y, softmax(a_S)) + lambda * H(softmax(a_T / tau), softmax(a_S / tau))

with tau > 1; the label term is deliberately not scaled by (1 - lambda).
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .config import TrainConfig
from .models import BiBranchNet, Teacher, pad_into_frame


def representation_loss(tap: torch.Tensor, xc: torch.Tensor, xp: torch.Tensor) -> torch.Tensor:
    """|| tap - (Pad(xc) + xp) ||_2^2, averaged over the batch."""
    if tap.shape != xp.shape:
        raise ValueError(
            f"teacher tap shape {tuple(tap.shape)} does not match plaintext "
            f"branch output {tuple(xp.shape)}"
        )
    padded = pad_into_frame(xc, xp.shape[-2:])
    diff = tap - (padded + xp)
    return diff.pow(2).flatten(1).sum(dim=1).mean()


def soft_distill_loss(student_logits, teacher_logits, labels, tau: float, lam: float):
    ce = F.cross_entropy(student_logits, labels)
    p_teacher = F.softmax(teacher_logits / tau, dim=1)
    log_p_student = F.log_softmax(student_logits / tau, dim=1)
    soft = -(p_teacher * log_p_student).sum(dim=1).mean()
    return ce + lam * soft


def _loader(arrays, batch, shuffle, generator):
    n = len(arrays[0])
    order = torch.randperm(n, generator=generator) if shuffle else torch.arange(n)
    for start in range(0, n, batch):
        idx = order[start:start + batch]
        yield tuple(a[idx] for a in arrays)


def _cosine_lr(optimizer, base_lr, step, total):
    lr = base_lr * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total)))
    for group in optimizer.param_groups:
        group["lr"] = lr


def _tensors(splits, train=True):
    pick = ("train" if train else "test")
    sens = torch.as_tensor(getattr(splits, f"{pick}_sensitive"), dtype=torch.float32)
    plain = torch.as_tensor(getattr(splits, f"{pick}_plain"), dtype=torch.float32)
    full = torch.as_tensor(getattr(splits, f"{pick}_full"), dtype=torch.float32)
    labels = torch.as_tensor(getattr(splits, f"{pick}_labels"), dtype=torch.long)
    return sens, plain, full, labels


def train_teacher(teacher: Teacher, splits, cfg: TrainConfig, epochs: int | None = None):
    """Adam + cosine decay on whole images. Returns per-epoch test accuracy."""
    epochs = cfg.teacher_epochs if epochs is None else epochs
    opt = torch.optim.Adam(teacher.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    _, _, full, labels = _tensors(splits)
    history = []
    total = epochs * max(1, math.ceil(len(full) / cfg.batch))
    step = 0
    for _ in range(epochs):
        teacher.train()
        for xb, yb in _loader((full, labels), cfg.batch, True, gen):
            _cosine_lr(opt, cfg.lr, step, total)
            step += 1
            opt.zero_grad()
            loss = F.cross_entropy(teacher(xb), yb)
            if not torch.isfinite(loss):
                raise RuntimeError("teacher training diverged (non-finite loss)")
            loss.backward()
            opt.step()
        history.append(evaluate_teacher(teacher, splits))
    return history


@torch.no_grad()
def evaluate_teacher(teacher: Teacher, splits) -> float:
    teacher.eval()
    _, _, full, labels = _tensors(splits, train=False)
    preds = teacher(full).argmax(dim=1)
    return float((preds == labels).float().mean())


@torch.no_grad()
def evaluate(student: BiBranchNet, splits) -> float:
    student.eval()
    sens, plain, _, labels = _tensors(splits, train=False)
    preds = student(sens, plain).argmax(dim=1)
    return float((preds == labels).float().mean())


def distill_stage1(teacher: Teacher, student: BiBranchNet, splits, cfg: TrainConfig,
                   epochs: int):
    """Representation matching; the teacher is frozen, the head untouched."""
    teacher.eval()
    branch_params = (list(student.cipher.parameters())
                     + list(student.plain.parameters())
                     + list(student.crots))
    opt = torch.optim.Adam(branch_params, lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    sens, plain, full, labels = _tensors(splits)
    total = epochs * max(1, math.ceil(len(full) / cfg.batch))
    step = 0
    history = []
    for _ in range(epochs):
        student.train()
        running = 0.0
        count = 0
        for sb, pb, fb in _loader((sens, plain, full), cfg.batch, True, gen):
            _cosine_lr(opt, cfg.lr, step, total)
            step += 1
            with torch.no_grad():
                tap = teacher.tap(fb)
            xc, xp = student.branch_outputs(sb, pb, include_boundary=False)
            loss = representation_loss(tap, xc, xp)
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(sb)
            count += len(sb)
        history.append(running / count)
    return history


def distill_stage2(teacher: Teacher, student: BiBranchNet, splits, cfg: TrainConfig,
                   epochs: int):
    """Label + softened-logit training of the full student."""
    teacher.eval()
    opt = torch.optim.Adam(student.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed + 2)
    sens, plain, full, labels = _tensors(splits)
    total = epochs * max(1, math.ceil(len(full) / cfg.batch))
    step = 0
    history = []
    for _ in range(epochs):
        student.train()
        for sb, pb, fb, yb in _loader((sens, plain, full, labels), cfg.batch, True, gen):
            _cosine_lr(opt, cfg.lr, step, total)
            step += 1
            with torch.no_grad():
                t_logits = teacher(fb)
            loss = soft_distill_loss(student(sb, pb), t_logits, yb, cfg.tau, cfg.lam)
            if not torch.isfinite(loss):
                raise RuntimeError("distillation diverged (non-finite loss)")
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append(evaluate(student, splits))
    return history


def train_plain(student: BiBranchNet, splits, cfg: TrainConfig, epochs: int):
    """No-distillation baseline: plain cross-entropy, same budget."""
    opt = torch.optim.Adam(student.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed + 3)
    sens, plain, _, labels = _tensors(splits)
    total = epochs * max(1, math.ceil(len(sens) / cfg.batch))
    step = 0
    history = []
    for _ in range(epochs):
        student.train()
        for sb, pb, yb in _loader((sens, plain, labels), cfg.batch, True, gen):
            _cosine_lr(opt, cfg.lr, step, total)
            step += 1
            loss = F.cross_entropy(student(sb, pb), yb)
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append(evaluate(student, splits))
    return history
