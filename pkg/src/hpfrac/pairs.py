"""Element-pair integrals of the fractional bilinear form.

Two kinds of blocks are produced for a pair of elements K1, K2:

* the full difference block  (C/2) int_{K1 x K2} D_i D_j k  with
  D_i(x, z) = phi_i|K1(x) - phi_i|K2(z), indexed by the union of the local
  nodes of both elements (K1's nodes first, then K2's unshared nodes);
* the cross block  -C int_{K1 x K2} phi_i(x) phi_j(z) k  for separated
  elements, indexed by (K1 nodes, K2 nodes).

Rectangles that are axis-aligned in a common frame use the relative
coordinate r = z - x: the inner integral over the overlap box is a product
of two exact one-dimensional polynomial moments, and the kernel is
integrated over r with Duffy rules at r = 0 and box subdivision elsewhere.
All other pairs are split into triangular panels; panels that share a
vertex, an edge or coincide use the regularizing transforms of
:mod:`hpfrac.singular`, separated panels use tensor Gauss rules after
subdivision to admissible distance.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import RECT, TRI
from .quadrature import gauss, gauss_jacobi, square_rule, triangle_rule
from .singular import EDGE_ADJ, IDENTICAL, VERTEX_ADJ, ss_rule
from .space import lagrange_1d, ref_basis

TRI_REF = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
RECT_REF = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature orders and refinement controls.

    gauss_order: Gauss points per direction added to q + 1 for regular pairs.
    sing_order: points per variable added to q + 1 in the singular transforms.
    grading_levels: geometric levels of the mass rule toward the boundary.
    aniso_split: largest aspect ratio of a rectangle panel in the panel method.
    admissibility: a pair is regular when dist >= admissibility * max diameter.
    grading_ratio: ratio of consecutive cells in geometric grading.
    """

    gauss_order: int = 5
    sing_order: int = 4
    grading_levels: int = 14
    aniso_split: float = 4.0
    admissibility: float = 1.0
    grading_ratio: float = 0.15

    def __post_init__(self):
        for name in ("gauss_order", "sing_order", "grading_levels"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not self.aniso_split >= 2:
            raise ValueError("aniso_split must be at least 2")
        if not self.admissibility > 0:
            raise ValueError("admissibility must be positive")
        if not 0 < self.grading_ratio < 1:
            raise ValueError("grading_ratio must lie in (0, 1)")


@dataclass
class ElemGeo:
    """Affine element ``x = b + J xhat`` with its nodal basis."""

    shape: str
    J: np.ndarray
    b: np.ndarray
    q: int

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.basis = ref_basis(self.shape, self.q)
        self.nd = self.basis.dim
        self.ref_verts = TRI_REF if self.shape == TRI else RECT_REF
        self.verts = self.map(self.ref_verts)
        self.absdet = abs(float(np.linalg.det(self.J)))
        d = self.verts[:, None] - self.verts[None]
        self.diam = float(np.sqrt((d ** 2).sum(-1)).max())
        # total polynomial degree of the local space
        self.deg = self.q if self.shape == TRI else 2 * self.q

    def map(self, xhat):
        return np.asarray(xhat) @ self.J.T + self.b

    @classmethod
    def from_element(cls, el, q):
        return cls(el.shape, el.J, el.b, q)


def union_index(nodes1, nodes2):
    """Positions of element 2's local nodes in the union ordering, and the union size."""
    pos = {int(n): i for i, n in enumerate(nodes1)}
    idx = np.empty(len(nodes2), dtype=np.int64)
    nxt = len(nodes1)
    for j, n in enumerate(nodes2):
        n = int(n)
        if n in pos:
            idx[j] = pos[n]
        else:
            idx[j] = nxt
            nxt += 1
    return idx, nxt


def coincident_nodes(g1, g2, tol=1e-10):
    """Node identification by position, for standalone element pairs."""
    p1 = g1.map(g1.basis.nodes)
    p2 = g2.map(g2.basis.nodes)
    scale = tol * max(g1.diam, g2.diam)
    ids1 = np.arange(g1.nd)
    ids2 = np.empty(g2.nd, dtype=np.int64)
    nxt = g1.nd
    for j, p in enumerate(p2):
        d = np.hypot(*(p1 - p).T)
        i = int(np.argmin(d))
        if d[i] <= scale:
            ids2[j] = i
        else:
            ids2[j] = nxt
            nxt += 1
    return ids1, ids2


def combine_union(Bff, Bfg, Bgg, idx2, nu):
    """Assemble the union block from the ff, fg and gg parts."""
    nd1 = Bff.shape[0]
    B = np.zeros((nu, nu))
    B[:nd1, :nd1] += Bff
    B[np.ix_(idx2, idx2)] += Bgg
    B[np.ix_(np.arange(nd1), idx2)] -= Bfg
    B[np.ix_(idx2, np.arange(nd1))] -= Bfg.T
    return B


# ----------------------------------------------------------------------------
# relative-coordinate method for aligned rectangles


def _frame(g1):
    u = g1.J[:, 0] / np.hypot(*g1.J[:, 0])
    return np.array([u, [-u[1], u[0]]])


def _axis_map(g, R, origin, tol=1e-10):
    """Frame description of a rectangle, or None when it is not axis-aligned in the frame.

    Returns ``(ref, c, d)``: frame axis k follows reference coordinate
    ``ref[k]`` with frame coordinate ``c[k] + d[k] t``.
    """
    if g.shape != RECT:
        return None
    M = R @ g.J
    c = R @ (g.b - origin)
    sc = np.abs(M).max()
    if abs(M[0, 1]) <= tol * sc and abs(M[1, 0]) <= tol * sc:
        return (0, 1), c, np.array([M[0, 0], M[1, 1]])
    if abs(M[0, 0]) <= tol * sc and abs(M[1, 1]) <= tol * sc:
        return (1, 0), c, np.array([M[0, 1], M[1, 0]])
    return None


def aligned_rectangles(g1, g2):
    if g1.shape != RECT or g2.shape != RECT:
        return False
    R = _frame(g1)
    return _axis_map(g2, R, g1.b) is not None


def _axis_indices(q, ref):
    n = np.arange((q + 1) ** 2)
    a, b = n % (q + 1), n // (q + 1)
    return [a if r == 0 else b for r in ref]


def _interval(c, d):
    return (min(c, c + d), max(c, c + d))


def _moments(q, r, iv1, cd1, iv2, cd2, parts):
    """1D moment matrices over the overlap interval of [iv1] and [iv2] - r."""
    lo = np.maximum(iv1[0], iv2[0] - r)
    hi = np.minimum(iv1[1], iv2[1] - r)
    ln = np.maximum(hi - lo, 0.0)
    g, gw = gauss(q + 1)
    x = lo[:, None] + ln[:, None] * g
    w = ln[:, None] * gw
    out = {}
    v1 = lagrange_1d(q, (x - cd1[0]) / cd1[1]) if ("ff" in parts or "fg" in parts) else None
    v2 = lagrange_1d(q, (x + r[:, None] - cd2[0]) / cd2[1]) if ("gg" in parts or "fg" in parts) else None
    if "ff" in parts or "fg" in parts:
        wv1 = np.swapaxes(v1 * w[:, :, None], 1, 2)
    if "ff" in parts:
        out["ff"] = wv1 @ v1
    if "fg" in parts:
        out["fg"] = wv1 @ v2
    if "gg" in parts:
        out["gg"] = np.swapaxes(v2 * w[:, :, None], 1, 2) @ v2
    return out


def _breakpoints(iv1, iv2, tol):
    lo, hi = iv2[0] - iv1[1], iv2[1] - iv1[0]
    cand = [lo, iv2[0] - iv1[0], iv2[1] - iv1[1], hi]
    if lo < 0 < hi:
        cand.append(0.0)
    cand = [0.0 if abs(v) <= tol else v for v in cand]
    cand = sorted(set(cand))
    out = [cand[0]]
    for v in cand[1:]:
        if v - out[-1] > tol:
            out.append(v)
    return out


def _dyadic_breaks(ratio_small):
    """Breakpoints on [0, 1] refined geometrically toward 0 down to ``ratio_small``."""
    if ratio_small >= 0.5:
        return [0.0, 1.0]
    pts = [0.0]
    v = ratio_small
    while v < 1.0:
        pts.append(v)
        v *= 2.0
    pts.append(1.0)
    return pts


def _duffy_box(X, Y, s, n_t, n_v):
    """Rule on the box with corners 0 and (X, Y) for integrands k(r) M(r), M = O(|r|^2).

    Returns points r and weights including k(r).
    """
    t, wt = gauss_jacobi(n_t, 1.0 - 2.0 * s)
    gv, gwv = gauss(n_v)
    ax, ay = abs(X), abs(Y)
    pts, wts = [], []
    for first in (0, 1):
        a, b = (ax, ay) if first == 0 else (ay, ax)
        br = _dyadic_breaks(a / b) if b > 2 * a else [0.0, 1.0]
        vs = np.concatenate([lo + (hi - lo) * gv for lo, hi in zip(br[:-1], br[1:])])
        wv = np.concatenate([(hi - lo) * gwv for lo, hi in zip(br[:-1], br[1:])])
        T, V = np.meshgrid(t, vs, indexing="ij")
        W = np.outer(wt, wv)
        u1, u2 = a * T, b * T * V
        r2 = u1 ** 2 + u2 ** 2
        # Jacobian a b t, kernel r^(-2-2s), and the t^(1-2s) of the Jacobi weight removed
        w = W * a * b * T * r2 ** (-1.0 - s) / T ** (1.0 - 2.0 * s)
        if first == 0:
            r = np.column_stack([np.sign(X) * u1.ravel(), np.sign(Y) * u2.ravel()])
        else:
            r = np.column_stack([np.sign(X) * u2.ravel(), np.sign(Y) * u1.ravel()])
        pts.append(r)
        wts.append(w.ravel())
    return np.concatenate(pts), np.concatenate(wts)


def _regular_boxes(box, s, n, eta, max_boxes=200000):
    """Tensor Gauss on ``box`` for k(r) M(r), subdividing until admissible from r = 0."""
    g, gw = gauss(n)
    stack = [box]
    pts, wts = [], []
    count = 0
    while stack:
        u0, u1, v0, v1 = stack.pop()
        dx = max(0.0, u0, -u1)
        dy = max(0.0, v0, -v1)
        dist = np.hypot(dx, dy)
        lu, lv = u1 - u0, v1 - v0
        diam = max(lu, lv)
        if dist >= eta * diam:
            U, V = np.meshgrid(u0 + lu * g, v0 + lv * g, indexing="ij")
            r = np.column_stack([U.ravel(), V.ravel()])
            w = np.outer(gw, gw).ravel() * lu * lv * (r ** 2).sum(1) ** (-1.0 - s)
            pts.append(r)
            wts.append(w)
            continue
        if dist == 0.0:
            raise QuadratureError("regular box contains the kernel singularity")
        count += 1
        if count > max_boxes:
            raise QuadratureError("box subdivision did not terminate")
        if lu >= 2 * lv:
            m = 0.5 * (u0 + u1)
            stack += [(u0, m, v0, v1), (m, u1, v0, v1)]
        elif lv >= 2 * lu:
            m = 0.5 * (v0 + v1)
            stack += [(u0, u1, v0, m), (u0, u1, m, v1)]
        else:
            mu, mv = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
            stack += [(u0, mu, v0, mv), (mu, u1, v0, mv), (u0, mu, mv, v1), (mu, u1, mv, v1)]
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(wts)


def _r_rule(iv1, iv2, s, q, qc, touching):
    scale = max(iv1[0][1] - iv1[0][0], iv1[1][1] - iv1[1][0], iv2[0][1] - iv2[0][0], iv2[1][1] - iv2[1][0])
    tol = 1e-12 * scale
    b0 = _breakpoints(iv1[0], iv2[0], tol)
    b1 = _breakpoints(iv1[1], iv2[1], tol)
    n_reg = q + 1 + qc.gauss_order
    n_t = 2 * q + 2
    n_v = max(q + 1 + qc.sing_order, 2 * qc.sing_order + 8)
    pts, wts = [], []
    for u0, u1 in zip(b0[:-1], b0[1:]):
        for v0, v1 in zip(b1[:-1], b1[1:]):
            if (u0 == 0.0 or u1 == 0.0) and (v0 == 0.0 or v1 == 0.0):
                if not touching:
                    raise QuadratureError("separated boxes produced a singular relative box")
                X = u1 if u0 == 0.0 else u0
                Y = v1 if v0 == 0.0 else v0
                r, w = _duffy_box(X, Y, s, n_t, n_v)
            else:
                r, w = _regular_boxes((u0, u1, v0, v1), s, n_reg, qc.admissibility)
            pts.append(r)
            wts.append(w)
    return np.concatenate(pts), np.concatenate(wts)


def _kron_sum(c, E0, E1):
    """sum_r c_r E0[r] (x) E1[r] as a 4-index array [a, a', b, b']."""
    R, m, m2 = E0.shape
    S = (c[:, None] * E0.reshape(R, -1)).T @ E1.reshape(R, -1)
    return S.reshape(m, m2, E1.shape[1], E1.shape[2])


def box_blocks(g1, g2, s, qc, mode, chunk=4096):
    """Relative-coordinate integrals for aligned rectangles.

    ``mode='full'`` returns (Bff, Bfg, Bgg) without the constant, i.e. the
    integrals of f f, f g and g g against the kernel; ``mode='cross'``
    returns only the f g part.
    """
    q = g1.q
    R = _frame(g1)
    a1 = _axis_map(g1, R, g1.b)
    a2 = _axis_map(g2, R, g1.b)
    if a1 is None or a2 is None:
        raise QuadratureError("rectangles are not aligned in a common frame")
    (ref1, c1, d1), (ref2, c2, d2) = a1, a2
    iv1 = [_interval(c1[k], d1[k]) for k in range(2)]
    iv2 = [_interval(c2[k], d2[k]) for k in range(2)]
    touching = mode == "full"
    r, w = _r_rule(iv1, iv2, s, q, qc, touching)
    parts = ("ff", "fg", "gg") if mode == "full" else ("fg",)
    m = q + 1
    acc = {p: np.zeros((m, m, m, m)) for p in parts}
    for k0 in range(0, len(w), chunk):
        rr, ww = r[k0:k0 + chunk], w[k0:k0 + chunk]
        E0 = _moments(q, rr[:, 0], iv1[0], (c1[0], d1[0]), iv2[0], (c2[0], d2[0]), parts)
        E1 = _moments(q, rr[:, 1], iv1[1], (c1[1], d1[1]), iv2[1], (c2[1], d2[1]), parts)
        for p in parts:
            acc[p] += _kron_sum(ww, E0[p], E1[p])
    i1 = _axis_indices(q, ref1)
    i2 = _axis_indices(q, ref2)
    out = {}
    if "ff" in parts:
        S = acc["ff"]
        out["ff"] = S[i1[0][:, None], i1[0][None, :], i1[1][:, None], i1[1][None, :]]
    if "fg" in parts:
        S = acc["fg"]
        out["fg"] = S[i1[0][:, None], i2[0][None, :], i1[1][:, None], i2[1][None, :]]
    if "gg" in parts:
        S = acc["gg"]
        out["gg"] = S[i2[0][:, None], i2[0][None, :], i2[1][:, None], i2[1][None, :]]
    return out


# ----------------------------------------------------------------------------
# panel method


class Panel:
    """Triangle or parallelogram inside an element, given in its reference coordinates."""

    __slots__ = ("kind", "ref", "phys", "diam")

    def __init__(self, kind, ref, geo):
        self.kind = kind
        self.ref = np.asarray(ref, dtype=float)
        self.phys = geo.map(self.ref)
        d = self.phys[:, None] - self.phys[None]
        self.diam = float(np.sqrt((d ** 2).sum(-1)).max())

    def children(self, geo):
        P = self.ref
        if self.kind == TRI:
            m01, m12, m20 = 0.5 * (P[0] + P[1]), 0.5 * (P[1] + P[2]), 0.5 * (P[2] + P[0])
            tris = [(P[0], m01, m20), (m01, P[1], m12), (m20, m12, P[2]), (m01, m12, m20)]
            return [Panel(TRI, t, geo) for t in tris]
        # parallelogram P0, P1, P2, P3 with P2 = P1 + P3 - P0
        e1 = self.phys[1] - self.phys[0]
        e2 = self.phys[3] - self.phys[0]
        l1, l2 = np.hypot(*e1), np.hypot(*e2)
        u, v = P[1] - P[0], P[3] - P[0]
        if l1 >= 1.5 * l2:
            cuts = [(P[0], 0.5 * u, v), (P[0] + 0.5 * u, 0.5 * u, v)]
        elif l2 >= 1.5 * l1:
            cuts = [(P[0], u, 0.5 * v), (P[0] + 0.5 * v, u, 0.5 * v)]
        else:
            cuts = [(P[0] + a * u + b * v, 0.5 * u, 0.5 * v) for a in (0, 0.5) for b in (0, 0.5)]
        return [Panel(RECT, [o, o + du, o + du + dv, o + dv], geo) for o, du, dv in cuts]

    def rule(self, n):
        """Reference points (in element coordinates) and weights (reference measure)."""
        P = self.ref
        if self.kind == TRI:
            x, w = triangle_rule(n)
            A = np.column_stack([P[1] - P[0], P[2] - P[1]])
        else:
            x, w = square_rule(n)
            A = np.column_stack([P[1] - P[0], P[3] - P[0]])
        return x @ A.T + P[0], w * abs(np.linalg.det(A))


def _points_segments_dist(P, A, B):
    """Smallest distance from the points P to the segments A[i] -> B[i]."""
    d = B - A
    ll = np.maximum((d * d).sum(1), 1e-300)
    t = np.clip(np.einsum("pkc,kc->pk", P[:, None, :] - A[None], d) / ll, 0.0, 1.0)
    foot = A[None] + t[..., None] * d[None]
    return float(np.sqrt(((foot - P[:, None, :]) ** 2).sum(-1)).min())


def polygon_distance(A, B):
    """Distance between two disjoint convex polygons given by vertex arrays."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return min(_points_segments_dist(A, B, np.roll(B, -1, axis=0)),
               _points_segments_dist(B, A, np.roll(A, -1, axis=0)))


def _kernel_matrix(x, z, s):
    d2 = (x[:, None, 0] - z[None, :, 0]) ** 2 + (x[:, None, 1] - z[None, :, 1]) ** 2
    return d2 ** (-1.0 - s)


def _split_larger(p1, p2, g1, g2):
    if p1.diam >= p2.diam:
        return [(c, p2) for c in p1.children(g1)]
    return [(p1, c) for c in p2.children(g2)]


def _recurse(pairs, g1, g2, eta, leaf, max_pairs=500000):
    stack = list(pairs)
    count = 0
    while stack:
        p1, p2 = stack.pop()
        d = polygon_distance(p1.phys, p2.phys)
        if d >= eta * max(p1.diam, p2.diam):
            leaf(p1, p2)
            continue
        if d <= 1e-14 * max(p1.diam, p2.diam):
            raise QuadratureError("panels overlap or touch without a shared vertex pattern")
        count += 1
        if count > max_pairs:
            raise QuadratureError("panel subdivision did not terminate")
        stack += _split_larger(p1, p2, g1, g2)


def cross_panels(g1, g2, s, qc):
    """Integral of phi_i(x) phi_j(z) k over K1 x K2 for separated elements (no constant)."""
    n = g1.q + 1 + qc.gauss_order
    B = np.zeros((g1.nd, g2.nd))

    def leaf(p1, p2):
        x1, w1 = p1.rule(n)
        x2, w2 = p2.rule(n)
        F = g1.basis.eval(x1) * (w1 * g1.absdet)[:, None]
        G = g2.basis.eval(x2) * (w2 * g2.absdet)[:, None]
        B[:] += F.T @ _kernel_matrix(g1.map(x1), g2.map(x2), s) @ G

    _recurse([(_whole(g1), _whole(g2))], g1, g2, qc.admissibility, leaf)
    return B


def _whole(g):
    return Panel(g.shape, g.ref_verts, g)


def _rect_pieces(g, contact_ref, aniso):
    """Split an anisotropic rectangle along its long side, graded toward the contact end."""
    L0 = np.hypot(*g.J[:, 0])
    L1 = np.hypot(*g.J[:, 1])
    long_dir = 0 if L0 >= L1 else 1
    aspect = max(L0, L1) / min(L0, L1)
    if aspect <= aniso or len(contact_ref) == 0:
        return [(0.0, 1.0, long_dir)]
    t = np.array([c[long_dir] for c in contact_ref])
    if np.all(t < 0.5) or np.all(t > 0.5):
        w = 1.0 / aspect
        br = [0.0]
        v = w
        while v < 1.0 - 0.5 * w:
            br.append(v)
            v *= 2.0
        br.append(1.0)
        br = np.array(br)
        if np.all(t > 0.5):
            br = np.sort(1.0 - br)
        return [(a, b, long_dir) for a, b in zip(br[:-1], br[1:])]
    # the contact runs along a long side; splitting would create T-junctions
    return [(0.0, 1.0, long_dir)]


def _tri_panels(g, contact_ref, aniso):
    if g.shape == TRI:
        return [Panel(TRI, TRI_REF, g)]
    out = []
    for a, b, d in _rect_pieces(g, contact_ref, aniso):
        if d == 0:
            P = np.array([[a, 0.0], [b, 0.0], [b, 1.0], [a, 1.0]])
        else:
            P = np.array([[0.0, a], [1.0, a], [1.0, b], [0.0, b]])
        out.append(Panel(TRI, P[[0, 1, 2]], g))
        out.append(Panel(TRI, P[[0, 2, 3]], g))
    return out


def _match(A, B, tol):
    """Pairs (i, j) of coincident vertices between vertex arrays A and B."""
    out = []
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            if np.hypot(*(a - b)) <= tol:
                out.append((i, j))
    return out


def _ss_order(m, n1, n2):
    """Vertex orders of two triangles for the singular transforms, from matched pairs."""
    sh1 = [i for i, _ in m]
    sh2 = [j for _, j in m]
    rest1 = [i for i in range(3) if i not in sh1]
    rest2 = [j for j in range(3) if j not in sh2]
    return sh1 + rest1, sh2 + rest2


def full_panels(g1, g2, idx2, nu, s, qc, same):
    """Full difference block integral (no constant) via panels."""
    tol = 1e-10 * max(g1.diam, g2.diam)
    shared = _match(g1.verts, g2.verts, tol)
    c1 = [g1.ref_verts[i] for i, _ in shared]
    c2 = [g2.ref_verts[j] for _, j in shared]
    P1 = _tri_panels(g1, c1, qc.aniso_split)
    P2 = P1 if same else _tri_panels(g2, c2, qc.aniso_split)
    deg = max(g1.deg, g2.deg)
    # the singular transforms converge at a rate set by the panel geometry
    # (complex poles of the displacement norm), so their order has a floor
    # independent of q
    n_ss = max(deg + 1 + qc.sing_order, 2 * qc.sing_order + 8)
    n_xi = deg + 1
    n_reg = deg + 1 + qc.gauss_order
    acc = {"ff": np.zeros((g1.nd, g1.nd)), "fg": np.zeros((g1.nd, g2.nd)), "gg": np.zeros((g2.nd, g2.nd))}

    def ss_leaf(case, t1, t2, o1, o2):
        X, Y, W = ss_rule(case, s, n_ss, n_xi)
        A1 = t1.ref[o1]
        A2 = t2.ref[o2]
        d1 = abs(np.linalg.det(np.column_stack([A1[1] - A1[0], A1[2] - A1[1]])))
        d2 = abs(np.linalg.det(np.column_stack([A2[1] - A2[0], A2[2] - A2[1]])))
        for c0 in range(0, len(W), 20000):
            Xc, Yc = X[c0:c0 + 20000], Y[c0:c0 + 20000]
            x1 = A1[0] + Xc[:, :1] * (A1[1] - A1[0]) + Xc[:, 1:] * (A1[2] - A1[1])
            x2 = A2[0] + Yc[:, :1] * (A2[1] - A2[0]) + Yc[:, 1:] * (A2[2] - A2[1])
            k = ((g1.map(x1) - g2.map(x2)) ** 2).sum(1) ** (-1.0 - s)
            wk = W[c0:c0 + 20000] * k * (d1 * d2 * g1.absdet * g2.absdet)
            F = g1.basis.eval(x1)
            G = g2.basis.eval(x2)
            Fw = F * wk[:, None]
            acc["ff"] += Fw.T @ F
            acc["fg"] += Fw.T @ G
            acc["gg"] += (G * wk[:, None]).T @ G

    def reg_leaf(p1, p2):
        x1, w1 = p1.rule(n_reg)
        x2, w2 = p2.rule(n_reg)
        w1 = w1 * g1.absdet
        w2 = w2 * g2.absdet
        K = _kernel_matrix(g1.map(x1), g2.map(x2), s)
        F = g1.basis.eval(x1)
        G = g2.basis.eval(x2)
        acc["ff"] += F.T @ (F * (w1 * (K @ w2))[:, None])
        acc["gg"] += G.T @ (G * (w2 * (w1 @ K))[:, None])
        acc["fg"] += (F * w1[:, None]).T @ K @ (G * w2[:, None])

    separated = []
    for t1 in P1:
        for t2 in P2:
            m = _match(t1.phys, t2.phys, tol)
            if len(m) == 3:
                m = sorted(m)
                ss_leaf(IDENTICAL, t1, t2, [i for i, _ in m], [j for _, j in m])
            elif len(m) == 2:
                o1, o2 = _ss_order(m, 3, 3)
                ss_leaf(EDGE_ADJ, t1, t2, o1, o2)
            elif len(m) == 1:
                o1, o2 = _ss_order(m, 3, 3)
                ss_leaf(VERTEX_ADJ, t1, t2, o1, o2)
            else:
                separated.append((t1, t2))
    _recurse(separated, g1, g2, qc.admissibility, reg_leaf)
    return combine_union(acc["ff"], acc["fg"], acc["gg"], idx2, nu)


def full_regular(g1, g2, idx2, nu, s, qc):
    """Full difference block integral for separated elements (no constant)."""
    B = np.zeros((nu, nu))
    n = g1.q + 1 + qc.gauss_order
    i1 = np.arange(g1.nd)

    def leaf(p1, p2):
        x1, w1 = p1.rule(n)
        x2, w2 = p2.rule(n)
        w1 = w1 * g1.absdet
        w2 = w2 * g2.absdet
        K = _kernel_matrix(g1.map(x1), g2.map(x2), s)
        F = np.zeros((len(x1), nu))
        F[:, i1] = g1.basis.eval(x1)
        G = np.zeros((len(x2), nu))
        G[:, idx2] = g2.basis.eval(x2)
        B[:] += F.T @ (F * (w1 * (K @ w2))[:, None]) + G.T @ (G * (w2 * (w1 @ K))[:, None])
        C = (F * w1[:, None]).T @ K @ (G * w2[:, None])
        B[:] -= C + C.T

    _recurse([(_whole(g1), _whole(g2))], g1, g2, qc.admissibility, leaf)
    return B


def touching(g1, g2, tol=1e-10):
    return len(_match(g1.verts, g2.verts, tol * max(g1.diam, g2.diam))) > 0


def full_block(g1, g2, idx2, nu, s, qc, same=False):
    """Union-indexed integral of D_i D_j k over K1 x K2, without the constant C/2."""
    if not same and not touching(g1, g2):
        return full_regular(g1, g2, idx2, nu, s, qc)
    if aligned_rectangles(g1, g2):
        parts = box_blocks(g1, g2, s, qc, "full")
        return combine_union(parts["ff"], parts["fg"], parts["gg"], idx2, nu)
    return full_panels(g1, g2, idx2, nu, s, qc, same)


def cross_block(g1, g2, s, qc):
    """Integral of phi_i(x) phi_j(z) k over separated K1 x K2, without the constant."""
    if aligned_rectangles(g1, g2):
        return box_blocks(g1, g2, s, qc, "cross")["fg"]
    return cross_panels(g1, g2, s, qc)


def pair_integral(g1, g2, kp, qc, nodes1=None, nodes2=None):
    """Block (C/2) int_{K1 x K2} D_i D_j k on the union of local nodes.

    ``nodes1``/``nodes2`` are global node ids used to identify shared nodes;
    when omitted, nodes are matched by position.  Returns ``(B, idx2)`` where
    ``idx2`` gives the union position of each local node of K2.
    """
    if nodes1 is None or nodes2 is None:
        nodes1, nodes2 = coincident_nodes(g1, g2)
    same = g1 is g2
    idx2, nu = union_index(nodes1, nodes2)
    if not same:
        ov = _match(g1.verts, g2.verts, 1e-10 * max(g1.diam, g2.diam))
        if len(ov) == len(g1.verts) == len(g2.verts):
            same = True
    B = full_block(g1, g2, idx2, nu, kp.s, qc, same)
    return 0.5 * kp.c_norm * B, idx2
