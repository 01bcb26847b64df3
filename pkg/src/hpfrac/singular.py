"""Regularizing coordinate transforms for singular double integrals.

Triangle pairs that coincide, share an edge or share a vertex are handled
with the Sauter-Schwab decomposition of T x T, T = {0 <= y <= x <= 1}, into
regions parametrized by (xi, eta1, eta2, eta3) in (0,1)^4.  In every region
the displacement between the two points factors as a monomial in
(xi, eta1, eta2) times a vector bounded away from zero, so for the kernel
|x - y|^(-2-2s) multiplied by a product of two differences (each vanishing
like |x - y|) the integrand is a power of each variable times a smooth
function.  Those powers are integrated exactly with Gauss-Jacobi rules.

Conventions for the triangle maps ``x = V0 + x1 (V1 - V0) + x2 (V2 - V1)``:
identical pairs share all vertices in the same order; edge-adjacent pairs
share V0 and V1; vertex-adjacent pairs share V0.
"""

from functools import lru_cache

import numpy as np

from .quadrature import gauss, gauss_jacobi

IDENTICAL, EDGE_ADJ, VERTEX_ADJ = "identical", "edge", "vertex"


def _identical(x, a, b, c):
    one = np.ones_like(x)
    jac = x ** 3 * a ** 2 * b
    return [
        ((x, x * (1 - a + a * b)), (x * (1 - a * b * c), x * (1 - a)), jac),
        ((x * (1 - a * b * c), x * (1 - a)), (x, x * (1 - a + a * b)), jac),
        ((x, x * (a - a * b + a * b * c)), (x * (1 - a * b), x * (a - a * b)), jac),
        ((x * (1 - a * b), x * (a - a * b)), (x, x * (a - a * b + a * b * c)), jac),
        ((x * (1 - a * b * c), x * (a - a * b * c)), (x, x * (a - a * b)), jac),
        ((x, x * (a - a * b)), (x * (1 - a * b * c), x * (a - a * b * c)), jac),
    ], one


def _edge(x, a, b, c):
    one = np.ones_like(x)
    j1 = x ** 3 * a ** 2
    j2 = x ** 3 * a ** 2 * b
    return [
        ((x, x * a * c), (x * (1 - a * b), x * a * (1 - b)), j1),
        ((x, x * a), (x * (1 - a * b * c), x * a * b * (1 - c)), j2),
        ((x * (1 - a * b), x * a * (1 - b)), (x, x * a * b * c), j2),
        ((x * (1 - a * b * c), x * a * b * (1 - c)), (x, x * a), j2),
        ((x * (1 - a * b * c), x * a * (1 - b * c)), (x, x * a * b), j2),
    ], one


def _vertex(x, a, b, c):
    one = np.ones_like(x)
    jac = x ** 3 * b
    return [
        ((x, x * a), (x * b, x * b * c), jac),
        ((x * b, x * b * c), (x, x * a), jac),
    ], one


_REGIONS = {IDENTICAL: _identical, EDGE_ADJ: _edge, VERTEX_ADJ: _vertex}


def singular_exponents(case, s):
    """Exponents of (xi, eta1, eta2, eta3) absorbed into Gauss-Jacobi weights.

    Each is the Jacobian power plus 2 - (2 + 2s) = -2s times the power of the
    variable in the displacement factor.
    """
    if s is None:
        return (0.0, 0.0, 0.0, 0.0)
    if case == IDENTICAL:
        return (3 - 2 * s, 2 - 2 * s, 1 - 2 * s, 0.0)
    if case == EDGE_ADJ:
        return (3 - 2 * s, 2 - 2 * s, 0.0, 0.0)
    return (3 - 2 * s, 0.0, 0.0, 0.0)


def _rule_1d(n, expo):
    return gauss(n) if expo == 0.0 else gauss_jacobi(n, expo)


@lru_cache(maxsize=64)
def ss_rule(case, s, n, n_xi=None):
    """Points ``(X, Y)`` on T and weights ``W`` for a singular pair integral.

    ``sum W f(X, Y) k(X, Y)`` approximates the integral of ``f k`` over
    T x T, where the factor ``xi^a1 eta1^a2 eta2^a3`` of the integrand is
    integrated exactly.  ``s=None`` gives the plain transform (all Gauss),
    which integrates smooth functions over T x T.
    """
    expo = singular_exponents(case, s)
    n_xi = n if n_xi is None else n_xi
    rules = [_rule_1d(n_xi, expo[0])] + [_rule_1d(n, e) for e in expo[1:]]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.einsum("i,j,k,l->ijkl", *[r[1] for r in rules])
    x, a, b, c = (g.ravel() for g in grids)
    w = wgrid.ravel()
    regions, _ = _REGIONS[case](x, a, b, c)
    # remove the factors already carried by the Gauss-Jacobi weights
    strip = x ** expo[0] * a ** expo[1] * b ** expo[2] * c ** expo[3]
    X, Y, W = [], [], []
    for (t0, t1), (r0, r1), jac in regions:
        X.append(np.column_stack([t0, t1]))
        Y.append(np.column_stack([r0, r1]))
        W.append(w * jac / strip)
    return np.concatenate(X), np.concatenate(Y), np.concatenate(W)
