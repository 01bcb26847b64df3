import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpfrac.interpolation import (EDGE, WEIGHTS, ModelFunction, default_beta, edge_power, eval_1d, interp_1d,
                                  interp_quad, interp_triangle, loglinear_fit, patch_error,
                                  reference_patch_mesh, weighted_error)
from hpfrac.mesh import RECT, TRI, preset_mesh
from hpfrac.space import HpSpace, ref_basis


def eval_ref(shape, q, coeffs, pts):
    return ref_basis(shape, q).eval(pts) @ coeffs


def eval_ref_grad(shape, q, coeffs, pts):
    _, d = ref_basis(shape, q).eval_grad(pts)
    return np.einsum("ndc,d->nc", d, coeffs)


def tri_points(n, seed=0):
    x = np.random.default_rng(seed).random((n, 2))
    x[:, 1] *= x[:, 0]
    return x


def random_poly(q, rng, total=True):
    """Random polynomial of total degree q (or degree q per variable)."""
    powers = [(i, j) for i in range(q + 1) for j in range(q + 1) if (i + j <= q or not total)]
    c = rng.standard_normal(len(powers))
    return lambda x: sum(ck * x[:, 0] ** i * x[:, 1] ** j for ck, (i, j) in zip(c, powers))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10 ** 6))
def test_triangle_projection_property(q, seed):
    f = random_poly(q, np.random.default_rng(seed))
    c = interp_triangle(q, f)
    pts = tri_points(40, seed)
    assert np.allclose(eval_ref(TRI, q, c, pts), f(pts), atol=1e-12 * max(1, np.abs(f(pts)).max()))
    # interpolating the interpolant reproduces the same coefficients
    c2 = interp_triangle(q, lambda x: eval_ref(TRI, q, c, x))
    assert np.allclose(c2, c, atol=1e-12 * max(1, np.abs(c).max()))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10 ** 6))
def test_quad_projection_property(q, seed):
    f = random_poly(q, np.random.default_rng(seed), total=False)
    c = interp_quad(q, f)
    pts = np.random.default_rng(seed).random((40, 2))
    assert np.allclose(eval_ref(RECT, q, c, pts), f(pts), atol=1e-12 * max(1, np.abs(f(pts)).max()))


@pytest.mark.parametrize("q", [2, 4, 7])
def test_triangle_edge_trace_is_1d_gll_interpolant(q):
    f = lambda x: np.exp(x[:, 0] + x[:, 1]) * np.cos(3 * x[:, 1])  # noqa: E731
    c = interp_triangle(q, f)
    t = np.linspace(0, 1, 20)
    corners = np.array([[0, 0], [1, 0], [1, 1]], float)
    for i in range(3):
        a, b = corners[i], corners[(i + 1) % 3]
        pts = a + t[:, None] * (b - a)
        trace = eval_ref(TRI, q, c, pts)
        g = lambda s: f(a + np.atleast_1d(s)[:, None] * (b - a))  # noqa: E731
        uni = eval_1d(q, interp_1d(q, g), t)
        assert np.max(np.abs(trace - uni)) <= 1e-12


def test_quad_edge_trace_and_tensor_structure():
    q = 5
    gx = lambda x: np.sin(2 * x)  # noqa: E731
    hy = lambda y: np.exp(-y)  # noqa: E731
    c = interp_quad(q, lambda x: gx(x[:, 0]) * hy(x[:, 1]))
    cx, cy = interp_1d(q, gx), interp_1d(q, hy)
    assert np.allclose(c, np.outer(cy, cx).ravel(), atol=1e-15)
    t = np.linspace(0, 1, 20)
    trace = eval_ref(RECT, q, c, np.column_stack([t, np.zeros_like(t)]))
    assert np.max(np.abs(trace - eval_1d(q, cx, t) * hy(0.0))) <= 1e-12


def w1inf_error(shape, q, f, grad):
    pts = tri_points(2000, 1) if shape == TRI else np.random.default_rng(1).random((2000, 2))
    c = interp_triangle(q, f) if shape == TRI else interp_quad(q, f)
    e0 = np.abs(eval_ref(shape, q, c, pts) - f(pts)).max()
    e1 = np.abs(eval_ref_grad(shape, q, c, pts) - grad(pts)).max()
    return max(e0, e1)


def test_exponential_decay_in_q():
    f = lambda x: np.exp(x[:, 0] + x[:, 1])  # noqa: E731
    gf = lambda x: np.column_stack([f(x), f(x)])  # noqa: E731
    qs = list(range(2, 11))
    err = [w1inf_error(TRI, q, f, gf) for q in qs]
    slope, _, r2 = loglinear_fit(qs, err)
    assert slope < 0 and r2 > 0.9
    f2 = lambda x: np.exp(x[:, 0] * x[:, 1])  # noqa: E731
    gf2 = lambda x: np.column_stack([x[:, 1] * f2(x), x[:, 0] * f2(x)])  # noqa: E731
    err2 = [w1inf_error(RECT, q, f2, gf2) for q in qs]
    slope2, _, r22 = loglinear_fit(qs, err2)
    assert slope2 < 0 and r22 > 0.9


def test_global_interpolant_affine_and_continuous():
    mesh = preset_mesh("lshape-fan", 0.5, 2)
    space = HpSpace(mesh, 3, dirichlet=False)
    u = lambda x: 1 + 0.5 * x[:, 0] - 2 * x[:, 1]  # noqa: E731
    c = space.interpolate(u)
    rng = np.random.default_rng(0)
    for e, k in enumerate(mesh.elements):
        xr = tri_points(5, e) if k.shape == TRI else rng.random((5, 2))
        assert np.allclose(space.evaluate(c, e, xr)[0], u(xr @ k.J.T + k.b), atol=1e-12)
    g = space.interpolate(lambda x: np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]))
    t = np.linspace(0, 1, 11)
    for (a, b), els in mesh.edge_table.items():
        if len(els) != 2:
            continue
        pts = mesh.vertices[a] + t[:, None] * (mesh.vertices[b] - mesh.vertices[a])
        vals = []
        for e in els:
            k = mesh.elements[e]
            xr = np.clip(np.linalg.solve(k.J, (pts - k.b).T).T, 0, 1)
            vals.append(space.evaluate(g, e, xr)[0])
        assert np.max(np.abs(vals[0] - vals[1])) <= 1e-10


def test_edge_singularity_concentrates_in_boundary_layer():
    s = 0.5
    mesh = reference_patch_mesh(EDGE, 0.5, 4)
    u = edge_power(s)
    for q in (3, 4, 5):
        space = HpSpace(mesh, q, dirichlet=False)
        c = space.interpolate(u)
        err = {}
        for e, k in enumerate(mesh.elements):
            xr = np.random.default_rng(e).random((400, 2))
            x = xr @ k.J.T + k.b
            d = np.abs(space.evaluate(c, e, xr)[0] - u(x)).max()
            side = "layer" if k.ref.touches_singular_set else "interior"
            err[side] = max(err.get(side, 0.0), d)
        assert err["interior"] * 10 <= err["layer"]


def test_weighted_error_zero_for_exact_interpolant():
    mesh = reference_patch_mesh(EDGE, 0.5, 3)
    space = HpSpace(mesh, 2, dirichlet=False)
    u = ModelFunction(lambda x: x[:, 0] + x[:, 1] ** 2,
                      lambda x: np.column_stack([np.ones(len(x)), 2 * x[:, 1]]))
    c = space.interpolate(u)
    interior = [e for e, k in enumerate(mesh.elements) if not k.ref.touches_singular_set]
    l2, h1 = weighted_error(space, u, c, WEIGHTS["edge"], 0.3, interior)
    assert l2 < 1e-13 and h1 < 1e-13


@pytest.mark.parametrize("beta", [0.2, 0.3, 0.7])
def test_weighted_error_strip_closed_form(beta):
    mesh = reference_patch_mesh(EDGE, 0.5, 3)
    space = HpSpace(mesh, 2, dirichlet=False)
    zero = np.zeros(space.N)
    for e, k in enumerate(mesh.elements):
        if k.ref.touches_singular_set:
            continue
        a, b = k.verts[:, 1].min(), k.verts[:, 1].max()
        l2, h1 = weighted_error(space, lambda x: np.ones(len(x)), zero, WEIGHTS["edge"], beta, [e])
        exact = (b ** (2 * beta - 1) - a ** (2 * beta - 1)) / (2 * beta - 1)
        assert l2 ** 2 == pytest.approx(exact, rel=1e-8)
        assert h1 == 0


def test_edge_patch_decay_study():
    s, beta, sigma = 0.5, 0.3, 0.5
    qs = list(range(2, 9))
    tot = [np.hypot(*patch_error(EDGE, s, sigma, q, q, beta)) for q in qs]
    assert all(b < a for a, b in zip(tot, tot[1:]))
    slope, _, r2 = loglinear_fit(qs, tot)
    assert slope < 0 and r2 >= 0.97


def test_default_beta_in_admissible_range():
    for s in (0.1, 0.3, 0.5, 0.7, 0.9):
        b = default_beta(s)
        assert max(0.5 - s, 0) <= b < 1 - s
    assert default_beta(0.5) == pytest.approx(0.25)
