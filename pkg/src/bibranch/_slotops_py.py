"""Pure-numpy slot-vector kernels (fallback backend).

Same call surface as the compiled module in _slotops_cy.pyx. Every function
returns a fresh float64 array; inputs are never mutated.
"""

import numpy as np

NAME = "python"


def rotate(src: np.ndarray, r: int) -> np.ndarray:
    # cyclic left shift by r (right shift for negative r)
    return np.roll(src, -r)


def ew_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a + b


def ew_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a * b


def ew_mul_round(a: np.ndarray, b: np.ndarray, scale: float) -> np.ndarray:
    # product snapped to the 1/scale fixed-point grid
    out = a * b
    np.multiply(out, scale, out=out)
    np.rint(out, out=out)
    out /= scale
    return out


def ew_square(a: np.ndarray) -> np.ndarray:
    return a * a


def rotate_mul(src: np.ndarray, r: int, plain: np.ndarray) -> np.ndarray:
    # out[i] = src[(i+r) mod n] * plain[i]
    return np.roll(src, -r) * plain


def rotate_mul_round(src: np.ndarray, r: int, plain: np.ndarray, scale: float) -> np.ndarray:
    out = np.roll(src, -r)
    out *= plain
    np.multiply(out, scale, out=out)
    np.rint(out, out=out)
    out /= scale
    return out
