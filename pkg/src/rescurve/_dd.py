"""Double-double vector arithmetic for residual evaluation.

A value is a pair ``(hi, lo)`` of float64 arrays with ``|lo| <= ulp(hi)/2``.
Only what iterative refinement of the shifted normal equations needs is
provided: matrix-vector products with a float64 matrix, scaling, and sums.
"""

import numpy as np

_SPLIT = 134217729.0  # 2**27 + 1


def two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _split(a):
    c = _SPLIT * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def add(x, y):
    s, e = two_sum(x[0], y[0])
    e = e + x[1] + y[1]
    return quick_two_sum(s, e)


def neg(x):
    return (-x[0], -x[1])


def scale(c, x):
    """``c * x`` for a float64 scalar ``c``."""
    p, e = two_prod(c, x[0])
    e = e + c * x[1]
    return quick_two_sum(p, e)


def matvec(a, x):
    """``a @ x`` with ``a`` a float64 matrix and ``x`` double-double.

    Products are formed exactly and summed by a pairwise two-sum tree; the
    rounding errors of every stage are accumulated separately.
    """
    xh, xl = x
    p, e = two_prod(a, xh[None, :])
    err = e.sum(axis=1) + a @ xl
    while p.shape[1] > 1:
        if p.shape[1] % 2:
            p = np.concatenate([p, np.zeros((p.shape[0], 1))], axis=1)
        p, t = two_sum(p[:, ::2], p[:, 1::2])
        err += t.sum(axis=1)
    return two_sum(p[:, 0], err)


def from_float(v):
    v = np.asarray(v, dtype=float)
    return (v.copy(), np.zeros_like(v))
