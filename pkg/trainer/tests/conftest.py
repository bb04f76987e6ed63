import numpy as np
import pytest
import torch

from bitrainer.models import LAYOUTS, ArchLayout


@pytest.fixture
def toy_layout(monkeypatch):
    """Tiny 8x8 two-class architecture for finite-difference checks."""
    layout = ArchLayout("toy", (1, 8, 8), (("conv", 2, 3, 2, 0),),
                        head_half=3, n_classes=2)
    monkeypatch.setitem(LAYOUTS, "toy", layout)
    return layout


@pytest.fixture
def toy_batch():
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    full = torch.as_tensor(rng.standard_normal((4, 1, 8, 8)), dtype=torch.float64)
    sens = full[:, :, 2:6, 2:6].clone()
    plain = full.clone()
    plain[:, :, 2:6, 2:6] = 0.0
    labels = torch.as_tensor([0, 1, 1, 0])
    return sens, plain, full, labels
