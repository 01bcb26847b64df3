"""GLL nodal interpolation and weighted-norm error measurement.

The elementwise interpolants are the nodal interpolants on the GLL-based
point sets of :mod:`hpfrac.space`.  Because every edge carries the univariate
GLL points, their traces are univariate GLL interpolants and the elementwise
interpolants assemble into a continuous function.
"""

import csv
import io

import numpy as np

from .geometry import Polygon
from .mesh import (EDGE, RECT, TRI, VERTEX, VERTEX_EDGE, MacroElement, MeshParams,
                   refine)
from .quadrature import reference_rule
from .space import HpSpace, gll_rule, ref_basis


class InterpolationError(ValueError):
    pass


def interp_1d(q, f):
    """Nodal values of the degree-q GLL interpolant of ``f`` on [0, 1]."""
    return np.asarray(f(gll_rule(q).nodes), dtype=float)


def eval_1d(q, coeffs, t):
    """Evaluate the degree-q GLL Lagrange expansion with ``coeffs`` at ``t``."""
    x = gll_rule(q).nodes
    t = np.atleast_1d(np.asarray(t, dtype=float))
    L = np.ones((len(t), q + 1))
    for j in range(q + 1):
        for m in range(q + 1):
            if m != j:
                L[:, j] *= (t - x[m]) / (x[j] - x[m])
    return L @ coeffs


def interp_triangle(q, f):
    """Coefficients of the P_q interpolant on T; ``f`` maps (n, 2) points to values."""
    return np.asarray(f(ref_basis(TRI, q).nodes), dtype=float)


def interp_quad(q, f):
    """Coefficients of the Q_q (tensor GLL) interpolant on S."""
    return np.asarray(f(ref_basis(RECT, q).nodes), dtype=float)


def global_interpolate(space, u):
    """Global interpolant: element by element via the pullback, i.e. nodal values at the DOF points."""
    return space.interpolate(u)


class ModelFunction:
    """Callable with value and gradient, used for singular model functions."""

    def __init__(self, value, grad, name=""):
        self.value, self.grad, self.name = value, grad, name

    def __call__(self, x):
        return self.value(np.atleast_2d(x))


def vertex_power(s):
    """``r_v^s`` with ``r_v = |x|``."""
    def val(x):
        return np.hypot(x[:, 0], x[:, 1]) ** s

    def grad(x):
        r = np.hypot(x[:, 0], x[:, 1])
        return (s * r ** (s - 2))[:, None] * x

    return ModelFunction(val, grad, f"r_v^{s}")


def edge_power(s):
    """``y^s``: distance to the side {y = 0} raised to the power s."""
    def val(x):
        return np.maximum(x[:, 1], 0.0) ** s

    def grad(x):
        g = np.zeros_like(x)
        g[:, 1] = s * x[:, 1] ** (s - 1)
        return g

    return ModelFunction(val, grad, f"y^{s}")


def vertex_distance(x):
    return np.hypot(x[:, 0], x[:, 1])


def edge_distance(x):
    return np.abs(x[:, 1])


WEIGHTS = {"vertex": vertex_distance, "edge": edge_distance}


def element_rule(element, n):
    """Quadrature points (physical), reference points and weights on one element."""
    xr, w = reference_rule(element.shape, n)
    return xr @ element.J.T + element.b, xr, w * abs(np.linalg.det(element.J))


def weighted_error(space, u, coeffs, weight, beta, elements=None, order=None):
    """Weighted L2 and H1 seminorm parts of ``u - uh`` over a union of elements.

    Returns ``(|| w^(beta-1) (u - uh) ||, || w^beta grad(u - uh) ||)``, where
    ``weight`` maps physical points to the distance weight.  ``u`` is either a
    plain callable (then only the L2 part uses it and its gradient is taken
    as zero) or a :class:`ModelFunction`.
    """
    mesh = space.mesh
    elements = range(len(mesh.elements)) if elements is None else elements
    n = space.q + 6 if order is None else order
    l2 = h1 = 0.0
    grad_u = getattr(u, "grad", None)
    for e in elements:
        k = mesh.elements[e]
        wv = weight(k.verts)
        if beta < 1 and np.any(wv <= 0):
            raise InterpolationError(f"element {e} touches the zero set of the weight; the integrand is not integrable")
        x, xr, w = element_rule(k, n)
        phi, dphi = space.basis(e).eval_grad(xr)
        c = space.element_coeffs(coeffs, e)
        uh = phi @ c
        guh = np.einsum("ndc,d->nc", dphi, c) @ np.linalg.inv(k.J)
        err = np.asarray(u(x), dtype=float) - uh
        gerr = (grad_u(x) if grad_u is not None else 0.0) - guh
        r = weight(x)
        l2 += np.sum(w * r ** (2 * beta - 2) * err ** 2)
        h1 += np.sum(w * r ** (2 * beta) * np.sum(gerr ** 2, axis=1))
    return float(np.sqrt(l2)), float(np.sqrt(h1))


def reference_domain(kind):
    if kind in (VERTEX, VERTEX_EDGE):
        return Polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)])
    return Polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])


def reference_patch_mesh(kind, sigma, L):
    """Reference pattern as a standalone mesh (identity macro map)."""
    poly = reference_domain(kind)
    macro = [MacroElement(kind, poly.vertices.copy())]
    mesh = refine(poly, macro, MeshParams(sigma, L))
    return mesh


PATCH_MODELS = {
    VERTEX: (vertex_power, "vertex"),
    EDGE: (edge_power, "edge"),
    VERTEX_EDGE: (edge_power, "edge"),
}


def default_beta(s):
    """Midpoint of the admissible weight range (1/2 - s, 1 - s), clipped to [0, 1)."""
    lo, hi = 0.5 - s, 1.0 - s
    return float(min(max(0.5 * (lo + hi), 0.0), 1.0 - 1e-12))


def patch_error(kind, s, sigma, q, L, beta=None):
    """Weighted interpolation error of the model function over the interior part of a reference patch."""
    beta = default_beta(s) if beta is None else beta
    mesh = reference_patch_mesh(kind, sigma, L)
    space = HpSpace(mesh, q, dirichlet=False)
    model_fn, wname = PATCH_MODELS[kind]
    u = model_fn(s)
    coeffs = global_interpolate(space, u)
    interior = [e for e, k in enumerate(mesh.elements) if not k.ref.touches_singular_set]
    return weighted_error(space, u, coeffs, WEIGHTS[wname], beta, interior)


def loglinear_fit(x, y):
    """Least-squares fit ``log y = a + b x``; returns (b, a, r2)."""
    x = np.asarray(x, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[1]), float(coef[0]), float(r2)


def patch_study(kinds=(VERTEX, EDGE, VERTEX_EDGE), s_values=(0.3, 0.5, 0.7), sigma=0.5,
                qs=range(2, 9), beta=None):
    """Rows ``{patch_kind, s, sigma, beta, q, L, l2_weighted, h1_weighted}`` with q = L."""
    rows = []
    for kind in kinds:
        for s in s_values:
            b = default_beta(s) if beta is None else beta
            for q in qs:
                l2, h1 = patch_error(kind, s, sigma, q, q, b)
                rows.append({"patch_kind": kind, "s": s, "sigma": sigma, "beta": b, "q": q, "L": q,
                             "l2_weighted": l2, "h1_weighted": h1})
    return rows


PATCH_COLUMNS = ["patch_kind", "s", "sigma", "beta", "q", "L", "l2_weighted", "h1_weighted"]


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in columns})
    return buf.getvalue()
