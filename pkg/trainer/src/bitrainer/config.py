"""Run configuration: JSON or key=value files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass
class TrainConfig:
    arch: str = "cnn3"
    dataset: str = "mnist"
    data_dir: str = "data"
    out_dir: str = "out"
    sigma: float = 0.1          # Gaussian stddev outside the sensitive center
    tau: float = 4.0            # softening temperature, > 1
    lam: float = 0.9            # weight of the softened cross-entropy term
    epochs: int = 20            # total student epochs (stage 1 + stage 2)
    stage1_frac: float = 0.3    # share of epochs spent matching representations
    teacher_epochs: int = 20
    batch: int = 256
    lr: float = 1e-4            # cosine-decayed
    seed: int = 0
    teacher_layer: str = "tap"  # recorded in the exported manifest

    def __post_init__(self):
        if not self.tau > 1:
            raise ValueError(f"tau must be > 1, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")

    def to_dict(self) -> dict:
        return asdict(self)


_ALIASES = {"lambda": "lam"}
_TYPES = {"sigma": float, "tau": float, "lam": float, "stage1_frac": float,
          "lr": float, "epochs": int, "teacher_epochs": int, "batch": int, "seed": int}


def load_config(path: str, **overrides) -> TrainConfig:
    """Read a JSON object or key=value lines into a TrainConfig."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        raw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    raw.update(overrides)
    kwargs = {}
    for key, value in raw.items():
        key = _ALIASES.get(key, key)
        if key in _TYPES and not isinstance(value, (int, float)):
            value = _TYPES[key](value)
        kwargs[key] = value
    return TrainConfig(**kwargs)
