"""Assembly of the dense Galerkin system of the integral fractional Laplacian.

For u, v supported in Omega the bilinear form splits per element K1 as

    sum over K2 touching K1:   (C/2) int_{K1 x K2} (u(x)-u(z)) (v(x)-v(z)) k
    + int_{K1} u v kappa_{K1},  kappa_K = C int over R^2 minus N(K) of k
    - sum over K2 not touching K1: C int_{K1 x K2} u(x) v(z) k,

with k = |x - z|^(-2-2s) and N(K) the union of the elements touching K.
The weight kappa_K is evaluated in closed form from the boundary of N(K)
(see :mod:`hpfrac.kernel`).  Touching and near blocks depend only on the
pair geometry up to similarity, so they are cached under a normalized key
and rescaled by lambda^(2-2s).  Far pairs are integrated with tensor Gauss
rules batched over all partner elements.
"""

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .kernel import KernelParams, complement_integral
from .mesh import RECT, TRI
from .pairs import (ElemGeo, QuadConfig, cross_block, full_block, polygon_distance, union_index)
from .quadrature import gauss, reference_rule, triangle_rule
from .symmetry import build_reduction, invariant, trivial_reduction


class AssemblyError(RuntimeError):
    pass


class SymmetricDenseMatrix:
    """Symmetric matrix kept as its lower triangle; reads are symmetric by construction.

    The upper triangle of ``lower`` is zero.
    """

    def __init__(self, lower):
        self.lower = np.tril(np.asarray(lower, dtype=float))
        self.N = self.lower.shape[0]

    @classmethod
    def from_full(cls, A, block=512):
        """Symmetrize (A + A^T)/2 in place and keep its lower triangle (A is consumed)."""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        for r0 in range(0, n, block):
            r1 = min(n, r0 + block)
            A[r0:r1, :r1] = 0.5 * (A[r0:r1, :r1] + A[:r1, r0:r1].T)
        for r0 in range(0, n, block):
            r1 = min(n, r0 + block)
            A[r0:r1, r0:r1] = np.tril(A[r0:r1, r0:r1])
            A[r0:r1, r1:] = 0.0
        out = cls.__new__(cls)
        out.lower, out.N = A, n
        return out

    def to_dense(self):
        A = self.lower + self.lower.T
        A[np.diag_indices(self.N)] *= 0.5
        return A

    def __getitem__(self, ij):
        i, j = ij
        return self.lower[max(i, j), min(i, j)]

    def matvec(self, x):
        x = np.asarray(x)
        return self.lower @ x + self.lower.T @ x - np.diag(self.lower) * x

    @property
    def shape(self):
        return (self.N, self.N)


# ----------------------------------------------------------------------------
# similarity keys


def _frame(J1):
    c0 = J1[:, 0]
    lam = float(np.hypot(*c0))
    u = c0 / lam
    Q = np.array([[u[0], u[1]], [-u[1], u[0]]])
    if (Q @ J1[:, 1])[1] < 0:
        Q = np.array([[1.0, 0.0], [0.0, -1.0]]) @ Q
    return Q, lam


def pair_key(g1, g2, digits=9):
    """Key identifying the pair (K1, K2) up to a similarity, and the scale lambda."""
    Q, lam = _frame(g1.J)
    vals = np.concatenate([(Q @ g1.J).ravel(), (Q @ g2.J).ravel(), Q @ (g2.b - g1.b)]) / lam
    vals = np.round(vals, digits) + 0.0
    return (g1.shape, g2.shape) + tuple(vals.tolist()), lam


def _reverse_perm(n1, idx2_12, idx1_21, nu):
    """Permutation p with B12 = B21[p][:, p] between the two union orderings."""
    p = np.empty(nu, dtype=np.int64)
    p[np.arange(n1)] = idx1_21
    p[idx2_12] = np.arange(len(idx2_12))
    return p


# ----------------------------------------------------------------------------
# mass term


# cells thinner than this fraction of an element would place mapped points
# below the rounding level of the coordinates
MIN_CELL = 1e-10


def _graded_1d(n, deep_lo, deep_hi, levels, ratio, mild):
    """Composite Gauss rule on [0, 1]; geometric toward deep ends, dyadic ``mild`` levels at both ends."""
    br = {0.0, 1.0}
    g = ratio ** np.arange(1, levels + 1)
    g = g[g >= MIN_CELL]
    if deep_lo:
        br.update(g)
    if deep_hi:
        br.update(1.0 - g)
    if mild > 0:
        h = 0.5 ** np.arange(1, mild + 1)
        br.update(h)
        br.update(1.0 - h)
    br = np.array(sorted(br))
    g, gw = gauss(n)
    a, b = br[:-1, None], br[1:, None]
    return (a + (b - a) * g).ravel(), ((b - a) * gw).ravel()


def _mild_levels(aspect):
    return int(math.ceil(math.log2(aspect))) if aspect > 2.0 else 0


def _rect_mass_rule(k, n, contact, qc):
    """Reference rule for a parallelogram; ``contact`` = (vertex flags, side flags, corner flags)."""
    cv, cs, cc = contact
    # reference vertices: 0 (0,0), 1 (1,0), 2 (1,1), 3 (0,1); sides: 0 eta=0, 1 xi=1, 2 eta=1, 3 xi=0
    side_verts = [(0, 1), (1, 2), (2, 3), (3, 0)]
    pointlike = [cv[i] and (cc[i] or not any(cs[j] for j in range(4) if i in side_verts[j]))
                 for i in range(4)]
    xi_lo = cs[3] or pointlike[0] or pointlike[3]
    xi_hi = cs[1] or pointlike[1] or pointlike[2]
    eta_lo = cs[0] or pointlike[0] or pointlike[1]
    eta_hi = cs[2] or pointlike[2] or pointlike[3]
    l0 = float(np.hypot(*k.J[:, 0]))
    l1 = float(np.hypot(*k.J[:, 1]))
    lv = qc.grading_levels
    x, wx = _graded_1d(n, xi_lo, xi_hi, lv, qc.grading_ratio, _mild_levels(l0 / l1))
    y, wy = _graded_1d(n, eta_lo, eta_hi, lv, qc.grading_ratio, _mild_levels(l1 / l0))
    X, Y = np.meshgrid(x, y, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wx, wy).ravel()


def _collapsed(A, B, C, n, u_deep, v_lo, v_hi, levels, ratio):
    """Rule for the triangle x = A + u (B - A + v (C - B)); graded in u toward the chosen end."""
    u, wu = _graded_1d(n + 1, u_deep == 0, u_deep == 1, levels, ratio, 0)
    v, wv = _graded_1d(n, v_lo, v_hi, levels, ratio, 0)
    U, V = np.meshgrid(u, v, indexing="ij")
    U, V = U.ravel(), V.ravel()
    pts = A + U[:, None] * ((B - A) + V[:, None] * (C - B))
    jac = abs((B - A)[0] * (C - B)[1] - (B - A)[1] * (C - B)[0])
    return pts, np.outer(wu, wv).ravel() * U * jac


def _tri_mass_rule(n, contact, qc):
    """Reference rule for the triangle (0,0), (1,0), (1,1) split into three at its centroid."""
    cv, cs, cc = contact
    V = [np.array(p) for p in ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0))]
    G = (V[0] + V[1] + V[2]) / 3.0
    lv, ratio = qc.grading_levels, qc.grading_ratio
    pts, wts = [], []
    for i in range(3):
        j = (i + 1) % 3
        A, B = V[i], V[j]
        # side i joins vertices i and j
        if cs[i]:
            # collapse from the centroid toward the contact side, graded at corners
            p, w = _collapsed(G, A, B, n, 1, cc[i], cc[j], lv, ratio)
            pts.append(p)
            wts.append(w)
            continue
        hot = [v for v in (i, j) if cv[v]]
        if not hot:
            p, w = _collapsed(G, A, B, n, None, False, False, lv, ratio)
        elif len(hot) == 1 and hot[0] == i:
            p, w = _collapsed(A, B, G, n, 0, False, False, lv, ratio)
        elif len(hot) == 1:
            p, w = _collapsed(B, G, A, n, 0, False, False, lv, ratio)
        else:
            M = 0.5 * (A + B)
            p1, w1 = _collapsed(A, M, G, n, 0, False, False, lv, ratio)
            p2, w2 = _collapsed(B, G, M, n, 0, False, False, lv, ratio)
            p, w = np.concatenate([p1, p2]), np.concatenate([w1, w2])
        pts.append(p)
        wts.append(w)
    return np.concatenate(pts), np.concatenate(wts)


def element_contact(mesh, e):
    """(vertex, side, corner) flags of an L0 element's contact with the boundary, else None.

    Side i joins local vertices i and i + 1; a corner is a polygon vertex.
    """
    k = mesh.elements[e]
    if k.layer != "L0":
        return None
    poly = mesh.poly
    tol = 1e-10 * poly.diameter()
    on = mesh.boundary_vertex_mask[list(k.vids)]
    n = len(k.vids)
    mids = np.array([0.5 * (k.verts[i] + k.verts[(i + 1) % n]) for i in range(n)])
    side = (poly.boundary_distance(mids, check=False) <= tol) & on & np.roll(on, -1)
    pv = poly.vertices
    corner = np.array([np.hypot(*(pv - p).T).min() <= tol for p in k.verts])
    return on.tolist(), side.tolist(), (corner & on).tolist()


def mass_rule(k, q, contact, qc):
    """Reference quadrature rule for the weighted mass term on element ``k``."""
    n = q + 1 + qc.gauss_order
    if contact is None:
        nv = len(k.vids)
        contact = ([False] * nv, [False] * nv, [False] * nv)
    if k.shape == RECT:
        return _rect_mass_rule(k, n, contact, qc)
    if not any(contact[0]):
        x, w = triangle_rule(n)
        return x, w
    return _tri_mass_rule(n, contact, qc)


# ----------------------------------------------------------------------------
# far field


# target digits of the far-field Gauss rules
FAR_DIGITS = 10.0


def far_order(q, ratio, gauss_order):
    """Gauss points per direction for a separated pair with dist / diam = ratio (>= admissibility).

    The kernel is analytic in a Bernstein ellipse of parameter about
    2 ratio + sqrt(4 ratio^2 + 1); the order targets ~1e-12 of the smooth
    part on top of what the polynomial factor needs.
    """
    rho = 2 * ratio + math.sqrt(4 * ratio * ratio + 1)
    need = (q + 1 + (FAR_DIGITS + 0.5 * gauss_order) / math.log10(rho)) / 2
    return max(int(math.ceil(need)), (q + 2) // 2 + 1)


# ----------------------------------------------------------------------------


@dataclass
class AssemblyStats:
    touching_pairs: int = 0
    touching_computed: int = 0
    near_pairs: int = 0
    near_computed: int = 0
    far_pairs: int = 0


class Assembler:
    """Element-wise assembly of P^T A P for a symmetry reduction P (identity by default)."""

    def __init__(self, space, kp, qc=None, reduction=None, threads=1):
        self.space = space
        self.kp = kp if isinstance(kp, KernelParams) else KernelParams(float(kp))
        self.qc = qc or QuadConfig()
        self.red = reduction or trivial_reduction(space)
        self.threads = max(1, int(threads))
        mesh = space.mesh
        self.mesh = mesh
        self.q = space.q
        self.geos = [ElemGeo.from_element(k, space.q) for k in mesh.elements]
        nv = len(mesh.vertices)
        v2e = [[] for _ in range(nv)]
        for e, k in enumerate(mesh.elements):
            for v in k.vids:
                v2e[v].append(e)
        self.touch = []
        for e, k in enumerate(mesh.elements):
            t = set()
            for v in k.vids:
                t.update(v2e[v])
            self.touch.append(sorted(t))
        self.loc = []
        for e in range(len(mesh.elements)):
            d = space.dof_map[e]
            o = np.where(d >= 0, self.red.dof_orbit[np.maximum(d, 0)], -1)
            self.loc.append(o)
        self.centers = np.array([g.verts.mean(0) for g in self.geos])
        self.radii = np.array([np.hypot(*(g.verts - c).T).max() for g, c in zip(self.geos, self.centers)])
        self.diams = np.array([g.diam for g in self.geos])
        self.cache = {}
        self.stats = AssemblyStats()

    # -- geometry helpers -------------------------------------------------

    def neighborhood_boundary(self, e):
        """Edges (P, Q) of the counterclockwise boundary of N(K_e)."""
        count = {}
        for e2 in self.touch[e]:
            for a, b in self.mesh.elements[e2].edges():
                key = (min(a, b), max(a, b))
                count.setdefault(key, []).append((a, b))
        edges = [v[0] for v in count.values() if len(v) == 1]
        V = self.mesh.vertices
        return V[[a for a, _ in edges]], V[[b for _, b in edges]]

    def contact(self, e):
        return element_contact(self.mesh, e)

    # -- element contributions -------------------------------------------

    def mass_block(self, e):
        k = self.mesh.elements[e]
        g = self.geos[e]
        xr, w = mass_rule(k, self.q, self.contact(e), self.qc)
        P, Q = self.neighborhood_boundary(e)
        x = g.map(xr)
        kap = np.empty(len(x))
        for c0 in range(0, len(x), 4096):
            kap[c0:c0 + 4096] = complement_integral(x[c0:c0 + 4096], P, Q, self.kp.s)
        kap *= self.kp.c_norm
        if np.any(kap <= 0) or not np.all(np.isfinite(kap)):
            raise AssemblyError(f"non-positive exterior weight on element {e}")
        F = g.basis.eval(xr)
        return F.T @ (F * (w * kap * g.absdet)[:, None])

    def _touch_block(self, e1, e2):
        """(C/2) union block for the touching ordered pair, with the K2 union positions."""
        g1, g2 = self.geos[e1], self.geos[e2]
        nm = self.space.node_map
        idx2, nu = union_index(nm[e1], nm[e2])
        key, lam = pair_key(g1, g2)
        scale = lam ** (2 - 2 * self.kp.s)
        hit = self.cache.get(("t",) + key)
        if hit is not None:
            return hit * scale, idx2
        rkey, rlam = pair_key(g2, g1)
        hit = self.cache.get(("t",) + rkey)
        if hit is not None:
            idx1_21, _ = union_index(nm[e2], nm[e1])
            p = _reverse_perm(g1.nd, idx2, idx1_21, nu)
            return hit[np.ix_(p, p)] * rlam ** (2 - 2 * self.kp.s), idx2
        B = 0.5 * self.kp.c_norm * full_block(g1, g2, idx2, nu, self.kp.s, self.qc, same=(e1 == e2))
        self.stats.touching_computed += 1
        # always return the cached round trip so serial and threaded runs agree bitwise
        self.cache[("t",) + key] = B / scale
        return self.cache[("t",) + key] * scale, idx2

    def _near_block(self, e1, e2):
        """-C int phi_i(x) phi_j(z) k for a separated but non-admissible pair."""
        g1, g2 = self.geos[e1], self.geos[e2]
        key, lam = pair_key(g1, g2)
        scale = lam ** (2 - 2 * self.kp.s)
        hit = self.cache.get(("n",) + key)
        if hit is not None:
            return hit * scale
        rkey, rlam = pair_key(g2, g1)
        hit = self.cache.get(("n",) + rkey)
        if hit is not None:
            return hit.T * rlam ** (2 - 2 * self.kp.s)
        B = -self.kp.c_norm * cross_block(g1, g2, self.kp.s, self.qc)
        self.stats.near_computed += 1
        self.cache[("n",) + key] = B / scale
        return self.cache[("n",) + key] * scale

    def classify(self, e1):
        """Partition the non-touching partners of e1 into near pairs and far pairs with their ratios."""
        others = np.ones(len(self.geos), dtype=bool)
        others[self.touch[e1]] = False
        idx = np.nonzero(others)[0]
        c = self.centers
        lb = np.hypot(*(c[idx] - c[e1]).T) - self.radii[idx] - self.radii[e1]
        dmax = np.maximum(self.diams[idx], self.diams[e1])
        eta = self.qc.admissibility
        far_sure = lb >= eta * dmax
        near, far, ratio = [], [], []
        for j, e2 in enumerate(idx):
            if far_sure[j]:
                far.append(e2)
                ratio.append(lb[j] / dmax[j])
                continue
            d = polygon_distance(self.geos[e1].verts, self.geos[e2].verts)
            if d >= eta * dmax[j]:
                far.append(e2)
                ratio.append(d / dmax[j])
            else:
                near.append(e2)
        return near, np.array(far, dtype=np.int64), np.array(ratio)

    def far_rows(self, e1, far, ratio):
        """Rows -C int phi_i(x) phi_j(z) k over K1 x (far partners), as (nd1, n_reduced)."""
        g1 = self.geos[e1]
        out = np.zeros((g1.nd, self.red.n))
        if len(far) == 0:
            return out
        orders = np.array([far_order(self.q, r, self.qc.gauss_order) for r in ratio])
        shapes = np.array([self.mesh.elements[e].shape for e in far])
        s = self.kp.s
        for shape in (TRI, RECT):
            for n in np.unique(orders):
                sel = far[(orders == n) & (shapes == shape)]
                if len(sel) == 0:
                    continue
                x1, w1 = reference_rule(g1.shape, int(n))
                F = g1.basis.eval(x1) * (w1 * g1.absdet)[:, None]
                X1 = g1.map(x1)
                x2, w2 = reference_rule(shape, int(n))
                G = self.space.bases[shape].eval(x2)
                J = np.array([self.geos[e].J for e in sel])
                b = np.array([self.geos[e].b for e in sel])
                dets = np.array([self.geos[e].absdet for e in sel])
                Z = np.einsum("pj,kij->kpi", x2, J) + b[:, None, :]
                W2 = w2[None, :] * dets[:, None]
                nk, p2 = len(sel), len(w2)
                cols = np.concatenate([self.loc[e] for e in sel])
                vals = np.empty((g1.nd, nk * G.shape[1]))
                step = max(1, 2_000_000 // (len(X1) * p2))
                for k0 in range(0, nk, step):
                    k1 = min(nk, k0 + step)
                    Zc = Z[k0:k1].reshape(-1, 2)
                    d2 = (X1[:, None, 0] - Zc[None, :, 0]) ** 2 + (X1[:, None, 1] - Zc[None, :, 1]) ** 2
                    T = (F.T @ d2 ** (-1.0 - s)) * W2[k0:k1].ravel()[None, :]
                    T = T.reshape(g1.nd * (k1 - k0), p2) @ G
                    vals[:, k0 * G.shape[1]:k1 * G.shape[1]] = T.reshape(g1.nd, -1)
                ok = cols >= 0
                S = sparse.csr_matrix((np.ones(ok.sum()), (np.nonzero(ok)[0], cols[ok])),
                                      shape=(len(cols), self.red.n))
                out += (S.T @ vals.T).T
        return -self.kp.c_norm * out

    def element_contribution(self, e1):
        """Dense contributions attributed to element e1, as a list of (rows, cols, block) and far rows."""
        parts = []
        nm_loc = self.loc
        for e2 in self.touch[e1]:
            B, idx2 = self._touch_block(e1, e2)
            self.stats.touching_pairs += 1
            u = np.full(B.shape[0], -1, dtype=np.int64)
            u[:len(nm_loc[e1])] = nm_loc[e1]
            u[idx2] = nm_loc[e2]
            parts.append((u, u, B))
        parts.append((nm_loc[e1], nm_loc[e1], self.mass_block(e1)))
        near, far, ratio = self.classify(e1)
        for e2 in near:
            self.stats.near_pairs += 1
            parts.append((nm_loc[e1], nm_loc[e2], self._near_block(e1, e2)))
        self.stats.far_pairs += len(far)
        return parts, self.far_rows(e1, far, ratio)

    def _scatter(self, A, e1, weight, parts, far):
        for r, c, B in parts:
            mr, mc = r >= 0, c >= 0
            if not mr.any() or not mc.any():
                continue
            Bs = B[np.ix_(mr, mc)] * weight
            np.add.at(A, (r[mr][:, None], c[mc][None, :]), Bs)
        r = self.loc[e1]
        m = r >= 0
        np.add.at(A, r[m], weight * far[m])

    def assemble(self):
        """Reduced matrix P^T A P as a :class:`SymmetricDenseMatrix`."""
        n = self.red.n
        A = np.zeros((n, n))
        reps = list(zip(self.red.element_reps, self.red.element_weight))
        # touching and near blocks fill the cache serially so the order is fixed
        if self.threads == 1:
            for e, w in reps:
                parts, far = self.element_contribution(e)
                self._scatter(A, e, w, parts, far)
        else:
            for e, _ in reps:
                for e2 in self.touch[e]:
                    self._touch_block(e, e2)
                for e2 in self.classify(e)[0]:
                    self._near_block(e, e2)
            with ThreadPoolExecutor(self.threads) as ex:
                results = ex.map(lambda ew: self.element_contribution(ew[0]), reps)
                for (e, w), (parts, far) in zip(reps, results):
                    self._scatter(A, e, w, parts, far)
        return SymmetricDenseMatrix.from_full(A)


def assemble_rhs(space, f, order=None):
    """Load vector b_i = int f phi_i with Gauss rules of order q + 4 per element."""
    n = space.q + 4 if order is None else order
    b = np.zeros(space.N)
    for e, k in enumerate(space.mesh.elements):
        xr, w = reference_rule(k.shape, n)
        x = xr @ k.J.T + k.b
        fv = np.asarray(f(x), dtype=float) * np.ones(len(x))
        F = space.basis(e).eval(xr)
        loc = F.T @ (fv * w * abs(np.linalg.det(k.J)))
        d = space.dof_map[e]
        m = d >= 0
        np.add.at(b, d[m], loc[m])
    return b


def assemble(space, kp, qc=None, threads=1, reduction=None):
    """Full (or, with ``reduction``, reduced) Galerkin matrix."""
    return Assembler(space, kp, qc, reduction, threads).assemble()


@dataclass
class GalerkinSystem:
    A: SymmetricDenseMatrix
    b: np.ndarray
    b_full: np.ndarray
    reduction: object
    stats: AssemblyStats


def assemble_system(space, kp, f, qc=None, symmetry=True, threads=1):
    """Matrix and load vector, reduced by the mesh symmetries when the load is invariant."""
    b_full = assemble_rhs(space, f)
    red = trivial_reduction(space)
    if symmetry:
        cand = build_reduction(space)
        if not cand.is_trivial and invariant(cand, space, b_full, tol=1e-10):
            red = cand
    asm = Assembler(space, kp, qc, red, threads)
    A = asm.assemble()
    return GalerkinSystem(A, red.restrict(b_full), b_full, red, asm.stats)


HEADER = struct.Struct("<8sqdddqq")
MAGIC = b"HPFRAC01"


def dump_system(path, A, b, s, sigma, L, q):
    """Binary dump: header {N, s, sigma, L, q}, then A and b as row-major float64."""
    M = A.to_dense() if isinstance(A, SymmetricDenseMatrix) else np.asarray(A, dtype=float)
    N = M.shape[0]
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, N, float(s), float(sigma), 0.0, int(L), int(q)))
        fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_system(path):
    with open(path, "rb") as fh:
        magic, N, s, sigma, _, L, q = HEADER.unpack(fh.read(HEADER.size))
        if magic != MAGIC:
            raise AssemblyError("not a system dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if len(data) != N * N + N:
        raise AssemblyError("truncated system dump")
    return {"N": N, "s": s, "sigma": sigma, "L": L, "q": q,
            "A": data[:N * N].reshape(N, N).copy(), "b": data[N * N:].copy()}
