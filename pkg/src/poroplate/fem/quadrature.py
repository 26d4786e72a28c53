"""Tensor-product Gauss rules on the reference domains used by the kernels."""

from __future__ import annotations

import numpy as np


def gauss1d(n: int, a: float = -1.0, b: float = 1.0):
    """n-point Gauss-Legendre rule on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def gauss_hex(n: int = 2):
    """(points, weights) on [-1, 1]^3; n=2 is exact for trilinear stiffness."""
    x, w = gauss1d(n)
    P = np.array([(xi, xj, xk) for xi in x for xj in x for xk in x])
    W = np.array([wi * wj * wk for wi in w for wj in w for wk in w])
    return P, W


def gauss_quad(n: int = 2, unit: bool = False):
    """(points, weights) on [-1, 1]^2, or on [0, 1]^2 when unit=True."""
    if unit:
        x, w = gauss1d(n, 0.0, 1.0)
    else:
        x, w = gauss1d(n)
    P = np.array([(xi, xj) for xi in x for xj in x])
    W = np.array([wi * wj for wi in w for wj in w])
    return P, W
