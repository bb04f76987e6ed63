"""Desk-scale pipeline runs and the engine roundtrip.

The distillation-vs-baseline comparison runs on the bundled digit corpus
with a strong perturbation (sigma=1.0), where the teacher's clean-image
knowledge gives a reproducible edge. The original-scale accuracy criteria
need the real MNIST archives and skip with instructions when absent; see
test_mnist_desk_scale.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest
import torch

from bitrainer import (
    build_student,
    build_teacher,
    distill_stage1,
    distill_stage2,
    evaluate,
    prepare_dataset,
    train_plain,
    train_teacher,
)
from bitrainer.config import TrainConfig
from bitrainer.distill import evaluate_teacher
from bitrainer.export import export_weights

MNIST_DIR = os.environ.get("BITRAINER_DATA", "data")


def _has_mnist():
    try:
        prepare_dataset("mnist", MNIST_DIR, noise_sigma=0.0, seed=0)
        return True
    except Exception:
        return False


@pytest.fixture(scope="module")
def surrogate():
    return prepare_dataset("digits", noise_sigma=1.0, seed=0)


@pytest.fixture(scope="module")
def teacher(surrogate):
    torch.manual_seed(0)
    cfg = TrainConfig(arch="cnn3", dataset="digits", teacher_epochs=60, batch=32, lr=1e-2)
    model = build_teacher("cnn3")
    train_teacher(model, surrogate, cfg)
    return model


@pytest.mark.slow
class TestSurrogateDeskScale:
    def test_teacher_learns_well_past_chance(self, teacher, surrogate):
        acc = evaluate_teacher(teacher, surrogate)
        assert acc >= 0.93, f"teacher accuracy {acc:.3f}"

    def test_untrained_student_is_chance_level(self, surrogate):
        torch.manual_seed(1)
        acc = evaluate(build_student("cnn3"), surrogate)
        assert acc < 0.3  # ~10 classes

    @pytest.mark.parametrize("seed", [0, 1])
    def test_distilled_beats_plain_training_at_equal_budget(self, teacher, surrogate, seed):
        cfg = TrainConfig(arch="cnn3", dataset="digits", epochs=40, batch=64,
                          lr=2e-3, seed=seed)
        s1 = max(1, int(cfg.epochs * cfg.stage1_frac))
        s2 = cfg.epochs - s1
        torch.manual_seed(seed + 10)
        student = build_student("cnn3")
        losses = distill_stage1(teacher, student, surrogate, cfg, s1)
        assert losses[-1] < losses[0], "stage 1 did not reduce the representation loss"
        distill_stage2(teacher, student, surrogate, cfg, s2)
        distilled_acc = evaluate(student, surrogate)

        torch.manual_seed(seed + 10)
        baseline = build_student("cnn3")
        base_hist = train_plain(baseline, surrogate, cfg, cfg.epochs)
        assert distilled_acc >= base_hist[-1], (
            f"distilled {distilled_acc:.4f} < plain-trained {base_hist[-1]:.4f}"
        )


@pytest.mark.slow
class TestEngineRoundtrip:
    def test_exported_weights_reproduce_logits_via_engine_cli(self, teacher, surrogate, tmp_path):
        cfg = TrainConfig(arch="cnn3", dataset="digits", epochs=10, batch=64,
                          lr=2e-3, seed=0)
        torch.manual_seed(42)
        student = build_student("cnn3")
        distill_stage1(teacher, student, surrogate, cfg, 3)
        distill_stage2(teacher, student, surrogate, cfg, 7)
        out_dir = tmp_path / "weights"
        export_weights(student, str(out_dir), mean=surrogate.mean, std=surrogate.std,
                       teacher_tap=1)

        sens = surrogate.test_sensitive[:16].astype(np.float32)
        plain = surrogate.test_plain[:16].astype(np.float32)
        fixture = tmp_path / "fixture16.npz"
        np.savez(fixture, sensitive=sens, plain_full=plain)
        with torch.no_grad():
            student.eval()
            mine = student(torch.as_tensor(sens), torch.as_tensor(plain)).numpy()

        report_path = tmp_path / "report.json"
        proc = subprocess.run(
            [sys.executable, "-m", "bibranch", "infer", "--arch", "cnn3",
             "--weights", str(out_dir), "--samples", str(fixture),
             "--batch", "16", "--out", str(report_path)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        report = json.loads(report_path.read_text())
        engine_logits = np.array(report["logits"])
        diff = np.abs(engine_logits - mine).max()
        assert diff <= 1e-4, f"engine vs trainer logits differ by {diff:.3g}"
        assert (engine_logits.argmax(1) == mine.argmax(1)).all()
        assert report["taint"]["verdict"] == "PASS"


@pytest.mark.mnist
@pytest.mark.skipif(not _has_mnist(), reason=(
    "real MNIST IDX archives not found; place train-images-idx3-ubyte[.gz] etc. "
    f"under {MNIST_DIR}/mnist (or set BITRAINER_DATA)"
))
class TestMnistDeskScale:
    """Original-scale accuracy criteria; needs the real archives on disk."""

    @pytest.fixture(scope="class")
    def mnist(self):
        return prepare_dataset("mnist", MNIST_DIR, noise_sigma=0.1, seed=0)

    @pytest.fixture(scope="class")
    def mnist_teacher(self, mnist):
        torch.manual_seed(0)
        cfg = TrainConfig(arch="cnn3", dataset="mnist", teacher_epochs=20,
                          batch=256, lr=1e-4)
        model = build_teacher("cnn3")
        self.history = train_teacher(model, mnist, cfg)
        return model

    def test_teacher_reaches_98_5_within_20_epochs(self, mnist_teacher, mnist):
        acc = evaluate_teacher(mnist_teacher, mnist)
        assert acc >= 0.985, f"teacher accuracy {acc:.4f} < 0.985 after 20 epochs"

    def test_distilled_beats_plain_at_equal_budget(self, mnist_teacher, mnist):
        cfg = TrainConfig(arch="cnn3", dataset="mnist", epochs=20, batch=256,
                          lr=1e-4, seed=0)
        s1 = max(1, int(cfg.epochs * cfg.stage1_frac))
        torch.manual_seed(10)
        student = build_student("cnn3")
        distill_stage1(mnist_teacher, student, mnist, cfg, s1)
        distill_stage2(mnist_teacher, student, mnist, cfg, cfg.epochs - s1)
        distilled_acc = evaluate(student, mnist)

        torch.manual_seed(10)
        baseline = build_student("cnn3")
        base = train_plain(baseline, mnist, cfg, cfg.epochs)
        assert distilled_acc >= base[-1], f"distilled {distilled_acc:.4f} < plain {base[-1]:.4f}"
