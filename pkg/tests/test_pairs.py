import numpy as np
import pytest

from brute_force import monomial_basis, pair_matrix, parallelogram_rule, triangle_rule, zero
from hpfrac.kernel import KernelParams
from hpfrac.mesh import RECT, TRI
from hpfrac.pairs import ElemGeo, QuadConfig, coincident_nodes, pair_integral, union_index

TRI_REF = np.array([[0, 0], [1, 0], [1, 1]], float)
RECT_REF = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def ccw(v):
    x, y = v[:, 0], v[:, 1]
    area = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    return v if area > 0 else v[::-1]


def x_rule(g, levels, order):
    if g.shape == TRI:
        return triangle_rule(g.map(TRI_REF), levels, 0.3, order)
    return parallelogram_rule(g.J, g.b, levels, 0.3, order)


def oracle(g1, g2, s, levels=10, order=6, theta_order=24):
    """Brute-force union block for the pair (g1, g2)."""
    same = g1 is g2
    n1, n2 = coincident_nodes(g1, g2)
    idx2, nu = union_index(n1, n2)
    p1, p2 = g1.map(g1.basis.nodes), g2.map(g2.basis.nodes)
    b1 = monomial_basis(p1, g1.q, g1.shape == RECT)
    b2 = monomial_basis(p2, g2.q, g2.shape == RECT)
    F1, F2 = [zero] * nu, [zero] * nu
    for i in range(len(p1)):
        F1[i] = b1[i]
    for j in range(len(p2)):
        F2[idx2[j]] = b2[j]
    deg = max(g.q if g.shape == TRI else 2 * g.q for g in (g1, g2))
    return pair_matrix(F1, F2, ccw(g1.verts), ccw(g2.verts), s, deg, same, x_rule(g1, levels, order),
                       theta_order)


def rect(x0, y0, w, h, q=1):
    return ElemGeo(RECT, np.diag([w, h]), [x0, y0], q)


def tri(a, b, c, q=1):
    a, b, c = map(np.asarray, (a, b, c))
    return ElemGeo(TRI, np.column_stack([b - a, c - b]), a, q)


def check(g1, g2, s, rtol=1e-4):
    B, _ = pair_integral(g1, g2, KernelParams(s), QuadConfig())
    ref = oracle(g1, g2, s)
    big = np.abs(ref) > 1e-3 * np.abs(ref).max()
    rel = np.abs(B - ref)[big] / np.abs(ref)[big]
    assert rel.max() <= rtol, rel.max()
    assert np.abs(B - ref).max() <= rtol * np.abs(ref).max()


@pytest.mark.parametrize("s", [0.3, 0.5, 0.7])
def test_shared_edge_unit_squares(s):
    check(rect(0, 0, 1, 1), rect(1, 0, 1, 1), s)


@pytest.mark.parametrize("s", [0.3, 0.7])
def test_identical_square(s):
    g = rect(0, 0, 1, 1)
    check(g, g, s)


@pytest.mark.parametrize("s", [0.3, 0.7])
def test_identical_triangle(s):
    g = tri((0, 0), (1, 0), (0.4, 0.9))
    check(g, g, s)


def test_triangles_sharing_edge():
    check(tri((0, 0), (1, 0), (0.3, 0.8)), tri((1, 0), (1.1, 0.9), (0.3, 0.8)), 0.5)


def test_triangles_sharing_vertex():
    check(tri((0, 0), (1, 0), (0.3, 0.8)), tri((1, 0), (1.8, 0.2), (1.5, 0.9)), 0.6)


def test_triangle_and_rectangle_sharing_edge():
    check(rect(0, 0, 1, 0.5), tri((0, 0.5), (1, 0.5), (1, 1.2)), 0.4)


def test_anisotropic_rectangles_sharing_long_edge():
    check(rect(0, 0, 1, 0.125), rect(0, 0.125, 1, 0.25), 0.5)


def test_rectangles_sharing_corner_quadratic():
    check(rect(0, 0, 1, 1, q=2), rect(1, 1, 1, 1, q=2), 0.5)


def test_separated_pair():
    check(rect(0, 0, 1, 1), tri((1.5, 0), (2.5, 0.2), (2, 1)), 0.5)


@pytest.mark.parametrize("s", [0.3, 0.7])
@pytest.mark.parametrize("h", [0.5, 0.25])
def test_scaling_homogeneity(s, h):
    kp, qc = KernelParams(s), QuadConfig()
    pairs = [(rect(0, 0, 1, 1, 2), rect(1, 0, 1, 1, 2)),
             (tri((0, 0), (1, 0), (0.3, 0.8), 2), tri((1, 0), (1.1, 0.9), (0.3, 0.8), 2)),
             (rect(0, 0, 1, 0.25, 2), tri((1, 0), (2, 0.5), (1.2, 0.9), 2))]
    for g1, g2 in pairs:
        B1, _ = pair_integral(g1, g2, kp, qc)
        s1 = ElemGeo(g1.shape, h * g1.J, h * g1.b, g1.q)
        s2 = ElemGeo(g2.shape, h * g2.J, h * g2.b, g2.q)
        Bh, _ = pair_integral(s1, s2, kp, qc)
        assert np.allclose(Bh, h ** (2 - 2 * s) * B1, rtol=1e-6, atol=1e-6 * np.abs(Bh).max())


def test_pair_symmetry():
    kp, qc = KernelParams(0.5), QuadConfig()
    pairs = [(rect(0, 0, 1, 1, 2), rect(1, 0, 1, 1, 2)),
             (tri((0, 0), (1, 0), (0.3, 0.8), 2), tri((1, 0), (1.1, 0.9), (0.3, 0.8), 2)),
             (rect(0, 0, 1, 0.5, 2), tri((0, 0.5), (1, 0.5), (1, 1.2), 2))]
    for g1, g2 in pairs:
        B12, idx2 = pair_integral(g1, g2, kp, qc)
        B21, idx1 = pair_integral(g2, g1, kp, qc)
        assert np.allclose(B12, B12.T, atol=1e-14 * np.abs(B12).max())
        # map union positions of (g2, g1) onto those of (g1, g2)
        n1, n2 = coincident_nodes(g1, g2)
        p12 = np.concatenate([g1.map(g1.basis.nodes), g2.map(g2.basis.nodes)])
        u12 = np.zeros((len(B12), 2))
        u12[:g1.nd] = p12[:g1.nd]
        u12[idx2] = g2.map(g2.basis.nodes)
        u21 = np.zeros((len(B21), 2))
        u21[:g2.nd] = g2.map(g2.basis.nodes)
        u21[idx1] = g1.map(g1.basis.nodes)
        perm = [int(np.argmin(np.linalg.norm(u21 - p, axis=1))) for p in u12]
        assert np.allclose(B12, B21[np.ix_(perm, perm)], rtol=1e-8, atol=1e-10 * np.abs(B12).max())
