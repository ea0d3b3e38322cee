"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules are collapsed (Stroud conical) Gauss-Jacobi products, so any
polynomial degree is available and all weights are positive.

Reference triangle: vertices (0, 0), (1, 0), (0, 1); area 1/2.
Reference interval: [0, 1]; length 1.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_ORDER = 30


class QuadratureError(ValueError):
    pass


def _check_order(order: int) -> int:
    order = int(order)
    if order < 1 or order > MAX_ORDER:
        raise QuadratureError(f"unsupported quadrature order {order} (1..{MAX_ORDER})")
    return order


@lru_cache(maxsize=None)
def _triangle(order: int) -> tuple[np.ndarray, np.ndarray]:
    n = (order + 2) // 2
    # x-direction carries the collapse factor (1 - s)
    s, ws = roots_jacobi(n, 1.0, 0.0)
    t, wt = roots_jacobi(n, 0.0, 0.0)
    s = 0.5 * (s + 1.0)
    t = 0.5 * (t + 1.0)
    ws = ws / 4.0
    wt = wt / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    x = S
    y = T * (1.0 - S)
    return np.column_stack([x.ravel(), y.ravel()]), W.ravel()


def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Points (n, 2) and weights (n,) on the reference triangle, exact to ``order``."""
    pts, w = _triangle(_check_order(order))
    return pts.copy(), w.copy()


@lru_cache(maxsize=None)
def _line(order: int) -> tuple[np.ndarray, np.ndarray]:
    n = (order + 2) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def line_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1], exact to ``order``."""
    t, w = _line(_check_order(order))
    return t.copy(), w.copy()
