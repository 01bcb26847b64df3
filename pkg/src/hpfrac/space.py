"""Continuous Lagrangian hp spaces with Gauss-Lobatto-Legendre nodes.

Reference triangle ``T = conv{(0,0), (1,0), (1,1)}`` carries the full space
P_q, reference square ``S = (0,1)^2`` the tensor space Q_q.  Nodes on every
reference edge are the univariate GLL points, which makes the traces of
elementwise nodal functions match across shared edges.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as leg
from scipy.spatial import cKDTree
from scipy.special import eval_jacobi, roots_legendre

from .mesh import TRI, RECT


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class GllRule:
    q: int
    nodes: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=None)
def gll_rule(q):
    """GLL points and weights on [0, 1]: endpoints plus the roots of P_q'."""
    if q < 1:
        raise SpaceError("GLL rules need q >= 1")
    c = np.zeros(q + 1)
    c[-1] = 1.0
    inner = leg.legroots(leg.legder(c)) if q > 1 else np.array([])
    x = np.concatenate([[-1.0], np.sort(inner), [1.0]])
    w = 2.0 / (q * (q + 1) * leg.legval(x, c) ** 2)
    # symmetrize against rounding so that the node set is exactly symmetric
    x = 0.5 * (x - x[::-1])
    nodes = 0.5 * (x + 1.0)
    nodes[0], nodes[-1] = 0.0, 1.0
    return GllRule(q, nodes, 0.5 * w)


@lru_cache(maxsize=None)
def _lagrange_coeffs(q):
    """Legendre coefficients of the GLL Lagrange polynomials (columns)."""
    x = gll_rule(q).nodes
    return np.linalg.inv(leg.legvander(2 * x - 1, q))


def lagrange_1d(q, t):
    """Degree-q GLL Lagrange basis on [0, 1] at points ``t`` (any shape) -> (..., q + 1)."""
    t = np.asarray(t, dtype=float)
    V = leg.legvander(2 * t.ravel() - 1, q)
    return (V @ _lagrange_coeffs(q)).reshape(t.shape + (q + 1,))


def _jacobi_all(n, a, b, x):
    """Jacobi polynomials P_0^(a,b), ..., P_n^(a,b) at x by the three-term recurrence."""
    P = np.empty((n + 1,) + x.shape)
    P[0] = 1.0
    if n >= 1:
        P[1] = (a + 1) + (a + b + 2) * (x - 1) / 2
    for k in range(2, n + 1):
        c = 2 * k + a + b
        a1 = 2 * k * (k + a + b) * (c - 2)
        a2 = (c - 1) * (c * (c - 2) * x + a * a - b * b)
        a3 = 2 * (k + a - 1) * (k + b - 1) * c
        P[k] = (a2 * P[k - 1] - a3 * P[k - 2]) / a1
    return P


def _tri_nodes(q):
    """Nodal set on T whose restriction to every edge is the GLL set.

    Barycentric coordinates built from the univariate GLL points ``v``:
    ``lambda_1 = (1 + 2 v_i - v_j - v_k) / 3`` for ``i + j + k = q``.
    """
    v = gll_rule(q).nodes
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    pts = []
    for k in range(q + 1):
        for j in range(q + 1 - k):
            i = q - j - k
            l1 = (1 + 2 * v[i] - v[j] - v[k]) / 3
            l2 = (1 + 2 * v[j] - v[i] - v[k]) / 3
            l3 = (1 + 2 * v[k] - v[i] - v[j]) / 3
            pts.append(l1 * corners[0] + l2 * corners[1] + l3 * corners[2])
    return np.array(pts)


def _rect_nodes(q):
    x = gll_rule(q).nodes
    X, Y = np.meshgrid(x, x, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def _modal_indices(shape, q):
    if shape == TRI:
        return [(a, b) for b in range(q + 1) for a in range(q + 1 - b)]
    return [(a, b) for b in range(q + 1) for a in range(q + 1)]


def _modal(shape, q, pts):
    """Orthogonal modal basis with reference gradients.

    Legendre products on S; on T the Dubiner basis
    ``x^i P_i((2y - x)/x) P_j^(0,2i+1)(2x - 1)``, with the first factor
    evaluated by its division-free recurrence.
    """
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    if shape == RECT:
        tx, ty = 2 * x - 1, 2 * y - 1
        Px, Py = leg.legvander(tx, q), leg.legvander(ty, q)
        dPx = np.zeros_like(Px)
        dPy = np.zeros_like(Py)
        eye = np.eye(q + 1)
        for a in range(1, q + 1):
            d = leg.legder(eye[a])
            dPx[:, a] = 2 * leg.legval(tx, d)
            dPy[:, a] = 2 * leg.legval(ty, d)
        idx = _modal_indices(shape, q)
        a = np.array([i for i, _ in idx])
        b = np.array([j for _, j in idx])
        val = Px[:, a] * Py[:, b]
        return val, np.stack([dPx[:, a] * Py[:, b], Px[:, a] * dPy[:, b]], axis=-1)
    return _dubiner(q, x, y, with_grad=True)


def _dubiner(q, x, y, with_grad):
    n = len(x)
    Q = np.zeros((q + 1, n))
    dQ = np.zeros((q + 1, n, 2))
    Q[0] = 1.0
    if q >= 1:
        Q[1] = 2 * y - x
        dQ[1] = [-1.0, 2.0]
    t = 2 * y - x
    dt = np.array([-1.0, 2.0])
    for m in range(1, q):
        Q[m + 1] = ((2 * m + 1) * t * Q[m] - m * x ** 2 * Q[m - 1]) / (m + 1)
        if not with_grad:
            continue
        dQ[m + 1] = ((2 * m + 1) * (dt * Q[m][:, None] + t[:, None] * dQ[m])
                     - m * (np.column_stack([2 * x, 0 * x]) * Q[m - 1][:, None]
                            + (x ** 2)[:, None] * dQ[m - 1])) / (m + 1)
    val = []
    grad = []
    r = 2 * x - 1
    if not with_grad:
        out = np.empty((n, (q + 1) * (q + 2) // 2))
        col = {ij: c for c, ij in enumerate(_modal_indices(TRI, q))}
        for i in range(q + 1):
            Pj = _jacobi_all(q - i, 0, 2 * i + 1, r)
            for j in range(q + 1 - i):
                out[:, col[(i, j)]] = Q[i] * Pj[j]
        return out
    for i, j in _modal_indices(TRI, q):
        Pj = eval_jacobi(j, 0, 2 * i + 1, r)
        dPj = 0.0 if j == 0 else (j + 2 * i + 2) / 2 * eval_jacobi(j - 1, 1, 2 * i + 2, r) * 2
        val.append(Q[i] * Pj)
        g = dQ[i] * Pj[:, None]
        g[:, 0] += Q[i] * dPj
        grad.append(g)
    return np.array(val).T, np.stack(grad, axis=1)


class RefBasis:
    """Nodal (Lagrange) basis of P_q on T or Q_q on S."""

    def __init__(self, shape, q):
        if q < 1:
            raise SpaceError("polynomial degree must be at least 1")
        self.shape, self.q = shape, q
        self.nodes = _tri_nodes(q) if shape == TRI else _rect_nodes(q)
        # scale the modal functions to unit L2 norm for a well-conditioned Vandermonde
        g, w = roots_legendre(q + 2)
        g, w = 0.5 * (g + 1), 0.5 * w
        X, Y = np.meshgrid(g, g, indexing="ij")
        W = np.outer(w, w)
        if shape == TRI:
            qp, qw = np.column_stack([X.ravel(), (X * Y).ravel()]), (W * X).ravel()
        else:
            qp, qw = np.column_stack([X.ravel(), Y.ravel()]), W.ravel()
        M, _ = _modal(shape, q, qp)
        scale = 1.0 / np.sqrt(qw @ M ** 2)
        V, _ = _modal(shape, q, self.nodes)
        self._inv = scale[:, None] * np.linalg.inv(V * scale)
        self.dim = len(self.nodes)

    def eval(self, pts):
        """Values (n, dim) of all basis functions at reference points."""
        pts = np.atleast_2d(pts)
        if self.shape == RECT:
            # the nodal basis of Q_q is the tensor product of 1D GLL Lagrange bases
            Lx = lagrange_1d(self.q, pts[:, 0])
            Ly = lagrange_1d(self.q, pts[:, 1])
            return (Ly[:, :, None] * Lx[:, None, :]).reshape(len(pts), -1)
        return _dubiner(self.q, pts[:, 0], pts[:, 1], with_grad=False) @ self._inv

    def eval_grad(self, pts):
        """Values (n, dim) and reference gradients (n, dim, 2)."""
        val, grad = _modal(self.shape, self.q, pts)
        return val @ self._inv, np.einsum("nkc,kd->ndc", grad, self._inv)

    def edge_node_ids(self):
        """Local node indices on each reference edge, ordered along the edge."""
        x = self.nodes
        tol = 1e-12
        if self.shape == TRI:
            sides = [(x[:, 1] < tol, x[:, 0]), (x[:, 0] > 1 - tol, x[:, 1]),
                     (np.abs(x[:, 0] - x[:, 1]) < tol, -x[:, 0])]
        else:
            sides = [(x[:, 1] < tol, x[:, 0]), (x[:, 0] > 1 - tol, x[:, 1]),
                     (x[:, 1] > 1 - tol, -x[:, 0]), (x[:, 0] < tol, -x[:, 1])]
        return [np.nonzero(m)[0][np.argsort(key[m])] for m, key in sides]


@lru_cache(maxsize=None)
def ref_basis(shape, q):
    return RefBasis(shape, q)


def in_reference(shape, pts, tol=1e-12):
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    if shape == TRI:
        return (y >= -tol) & (x <= 1 + tol) & (y <= x + tol)
    return (x >= -tol) & (x <= 1 + tol) & (y >= -tol) & (y <= 1 + tol)


class HpSpace:
    """Global continuous degree-q space on a mesh.

    ``dof_map[e]`` gives for each local node of element ``e`` its global DOF
    id, or -1 when the node lies on the boundary and ``dirichlet`` is set.
    DOFs are numbered in order of first appearance (macro id, element id,
    local node id), so numbering is deterministic.
    """

    def __init__(self, mesh, q, dirichlet=True):
        if q < 1:
            raise SpaceError("polynomial degree must be at least 1")
        self.mesh, self.q, self.dirichlet = mesh, q, dirichlet
        tol = 1e-9 * mesh.poly.diameter()
        bases = {TRI: ref_basis(TRI, q), RECT: ref_basis(RECT, q)}
        local_pts = []
        for k in mesh.elements:
            local_pts.append(bases[k.shape].nodes @ k.J.T + k.b)
        allp = np.concatenate(local_pts)
        # merge coincident nodes; reject near-coincident distinct ones
        tree = cKDTree(allp)
        pairs = tree.query_pairs(2 * tol, output_type="ndarray")
        parent = np.arange(len(allp))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in pairs:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        roots = np.array([find(i) for i in range(len(allp))])
        _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        node_id = rank[inverse]
        coords = allp[first[order]]
        dist_tree = cKDTree(coords)
        close = dist_tree.query_pairs(10 * tol, output_type="ndarray")
        if len(close):
            raise SpaceError("node matching is ambiguous: distinct nodes closer than the tolerance margin")
        self.node_coords = coords
        on_bd = mesh.poly.boundary_distance(coords, check=False) <= tol
        self.node_on_boundary = on_bd
        if dirichlet:
            free = ~on_bd
        else:
            free = np.ones(len(coords), dtype=bool)
        node_to_dof = -np.ones(len(coords), dtype=np.int64)
        node_to_dof[free] = np.arange(int(free.sum()))
        self.node_to_dof = node_to_dof
        self.dof_coords = coords[free]
        self.N = int(free.sum())
        self.dof_map = []
        self.node_map = []
        start = 0
        for k, p in zip(mesh.elements, local_pts):
            ids = node_id[start:start + len(p)]
            start += len(p)
            if len(np.unique(ids)) != len(ids):
                raise SpaceError("two nodes of one element were merged")
            self.node_map.append(ids)
            self.dof_map.append(node_to_dof[ids])
        self.bases = bases

    def basis(self, e):
        return self.bases[self.mesh.elements[e].shape]

    def element_coeffs(self, coeffs, e):
        dm = self.dof_map[e]
        c = np.zeros(len(dm))
        m = dm >= 0
        c[m] = np.asarray(coeffs)[dm[m]]
        return c

    def evaluate(self, coeffs, e, ref_points):
        """Value and physical gradient of the FE function at reference points of element ``e``."""
        k = self.mesh.elements[e]
        pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
        if not np.all(in_reference(k.shape, pts)):
            raise SpaceError("reference point outside the reference element")
        phi, dphi = self.basis(e).eval_grad(pts)
        c = self.element_coeffs(coeffs, e)
        val = phi @ c
        gref = np.einsum("ndc,d->nc", dphi, c)
        grad = gref @ np.linalg.inv(k.J)
        return val, grad

    def interpolate(self, u):
        """Nodal interpolant of a callable ``u(points) -> values`` (global, continuous)."""
        vals = np.asarray(u(self.dof_coords), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise SpaceError("function is not finite at a node")
        return vals


def build_space(mesh, q, dirichlet=True):
    return HpSpace(mesh, q, dirichlet)
