"""Quadrature rules on [0, 1], the reference square and the reference triangle."""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def gauss(n):
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1), 0.5 * w


@lru_cache(maxsize=None)
def gauss_jacobi(n, gamma):
    """n-point rule on [0, 1] for the weight ``t**gamma`` (gamma > -1)."""
    x, w = roots_jacobi(n, 0.0, gamma)
    return 0.5 * (x + 1), w / 2.0 ** (1 + gamma)


@lru_cache(maxsize=None)
def square_rule(n):
    """Tensor Gauss rule on (0,1)^2: points (n^2, 2), weights (n^2,)."""
    x, w = gauss(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(w, w).ravel()


@lru_cache(maxsize=None)
def triangle_rule(n):
    """Collapsed Gauss rule on T = {0 <= y <= x <= 1}; exact for degree 2n - 2."""
    x, w = gauss(n)
    u, wu = gauss_jacobi(n, 1.0)
    U, V = np.meshgrid(u, x, indexing="ij")
    pts = np.column_stack([U.ravel(), (U * V).ravel()])
    return pts, np.outer(wu, w).ravel()


def reference_rule(shape, n):
    from .mesh import TRI
    return triangle_rule(n) if shape == TRI else square_rule(n)


def graded_breakpoints(levels, ratio=0.15):
    """Breakpoints ``0 < ratio^levels < ... < ratio < 1`` of a geometric mesh of [0, 1]."""
    return np.concatenate([[0.0], ratio ** np.arange(levels, -1, -1)])


@lru_cache(maxsize=None)
def graded_rule(n, levels, ratio=0.15):
    """Composite Gauss rule on [0, 1] geometrically refined towards 0."""
    bp = graded_breakpoints(levels, ratio)
    x, w = gauss(n)
    pts = [a + (b - a) * x for a, b in zip(bp[:-1], bp[1:])]
    wts = [(b - a) * w for a, b in zip(bp[:-1], bp[1:])]
    return np.concatenate(pts), np.concatenate(wts)
