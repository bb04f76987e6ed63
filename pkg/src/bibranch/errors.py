"""Exception types shared across the engine.

Each class maps to one CLI exit code (see bibranch.cli).
"""


class ParameterError(ValueError):
    """Invalid scheme/context parameter (non-power-of-two degree, bad scale, ...)."""


class CapacityError(ValueError):
    """A packing layout does not fit the available ciphertext slots."""


class DepthBudgetError(RuntimeError):
    """A multiplication was requested on a ciphertext with no level left."""


class ShapeError(ValueError):
    """Tensor/kernel/layout shapes are inconsistent."""


class UsageError(RuntimeError):
    """API misuse: context mismatch, layout mismatch, unsupported combination."""


class ArchiveError(ValueError):
    """Weight archive is missing tensors, corrupt, or self-inconsistent."""


class IngestionError(ValueError):
    """Input files (weights, samples, tables) could not be read."""
