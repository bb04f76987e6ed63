# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled slot-vector kernels.

Single-pass C loops over the slot vectors; avoids the temporary arrays the
numpy fallback allocates per operation. Inputs are const views so read-only
ciphertext buffers are accepted.
"""

from libc.math cimport rint

import numpy as np

NAME = "cython"


def rotate(const double[::1] src, long r):
    cdef Py_ssize_t n = src.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t split
    r %= n
    if r < 0:
        r += n
    split = n - r
    out[:split] = src[r:]
    out[split:] = src[:r]
    return out_arr


def ew_add(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = a[i] + b[i]
    return out_arr


def ew_mul(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = a[i] * b[i]
    return out_arr


def ew_mul_round(const double[::1] a, const double[::1] b, double scale):
    cdef Py_ssize_t i, n = a.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = rint(a[i] * b[i] * scale) / scale
    return out_arr


def ew_square(const double[::1] a):
    cdef Py_ssize_t i, n = a.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = a[i] * a[i]
    return out_arr


def rotate_mul(const double[::1] src, long r, const double[::1] plain):
    """Fused rotate-then-multiply: out[i] = src[(i+r) mod n] * plain[i].

    The conv/fc inner loops spend most of their time in this pattern; the
    fusion skips the intermediate rotated vector entirely.
    """
    cdef Py_ssize_t i, n = src.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t split
    r %= n
    if r < 0:
        r += n
    split = n - r
    for i in range(split):
        out[i] = src[i + r] * plain[i]
    for i in range(split, n):
        out[i] = src[i + r - n] * plain[i]
    return out_arr


def rotate_mul_round(const double[::1] src, long r, const double[::1] plain,
                     double scale):
    cdef Py_ssize_t i, n = src.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t split
    r %= n
    if r < 0:
        r += n
    split = n - r
    for i in range(split):
        out[i] = rint(src[i + r] * plain[i] * scale) / scale
    for i in range(split, n):
        out[i] = rint(src[i + r - n] * plain[i] * scale) / scale
    return out_arr
