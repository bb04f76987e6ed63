"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the numpy
fallback is always available. `BIBRANCH_BACKEND=python|cython` forces a
choice (forcing cython without the built extension raises at import).
"""

import os

from . import _slotops_py

_forced = os.environ.get("BIBRANCH_BACKEND", "").strip().lower()

if _forced == "python":
    ops = _slotops_py
elif _forced == "cython":
    from . import _slotops_cy as ops  # noqa: F401  (ImportError is the signal)
else:
    try:
        from . import _slotops_cy as ops
    except ImportError:
        ops = _slotops_py


def active_backend() -> str:
    """Name of the kernel set in use: 'cython' or 'python'."""
    return ops.NAME
