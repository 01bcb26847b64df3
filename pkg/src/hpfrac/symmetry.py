"""Isometries of a meshed polygon and the induced reduction of the Galerkin system.

If an isometry g maps the polygon, the mesh and the nodal set onto
themselves, it permutes the DOFs, and the bilinear form is invariant:
a(phi_i o g, phi_j o g) = a(phi_i, phi_j).  For data f invariant under a
group G of such maps the discrete solution is G-invariant, so it lies in
the span of the orbit sums P = [sum over an orbit of phi_i].  The reduced
matrix P^T A P is obtained from one element per element orbit:

    P^T A P = sum over element orbits O of |O| P^T A_K P,   K in O,

where A_K collects every contribution that the assembly attributes to K.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class Reduction:
    """DOF orbits and element orbit representatives for a group of isometries."""

    n_full: int
    dof_orbit: np.ndarray
    n: int
    element_reps: list
    element_weight: list
    group: list = field(default_factory=list)

    def restrict(self, b):
        """P^T b."""
        out = np.zeros(self.n)
        np.add.at(out, self.dof_orbit, b)
        return out

    def expand(self, y):
        """P y: the full coefficient vector of an orbit combination."""
        return np.asarray(y)[self.dof_orbit]

    @property
    def is_trivial(self):
        return self.n == self.n_full


def _orthogonal_from(v, w, reflect):
    """Rotation (or reflection when ``reflect``) mapping direction v to direction w."""
    a = np.arctan2(w[1], w[0])
    b = np.arctan2(v[1], v[0])
    if reflect:
        th = a + b
        return np.array([[np.cos(th), np.sin(th)], [np.sin(th), -np.cos(th)]])
    th = a - b
    return np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])


def polygon_isometries(poly, tol=1e-10):
    """All isometries x -> A x + t mapping the polygon's vertex set onto itself."""
    V = poly.vertices
    n = len(V)
    scale = tol * poly.diameter()
    tree = cKDTree(V)
    out = []
    e0 = V[1] - V[0]
    for j in range(n):
        for orient in (1, -1):
            k = (j + orient) % n
            w = V[k] - V[j]
            if abs(np.hypot(*w) - np.hypot(*e0)) > scale:
                continue
            A = _orthogonal_from(e0, w, orient < 0)
            t = V[j] - A @ V[0]
            d, _ = tree.query(V @ A.T + t)
            if np.all(d <= scale):
                out.append((A, t))
    return out


def _point_permutation(pts, A, t, scale):
    tree = cKDTree(pts)
    d, idx = tree.query(pts @ A.T + t)
    if np.any(d > scale) or len(np.unique(idx)) != len(idx):
        return None
    return idx


def mesh_symmetries(space, tol=1e-9):
    """Isometries of the polygon that also preserve the mesh and the node set.

    Returns a list of ``(A, t, dof_perm, elem_perm)``.
    """
    mesh = space.mesh
    scale = tol * mesh.poly.diameter()
    elem_key = {tuple(sorted(k.vids)): e for e, k in enumerate(mesh.elements)}
    out = []
    for A, t in polygon_isometries(mesh.poly):
        vperm = _point_permutation(mesh.vertices, A, t, scale)
        if vperm is None:
            continue
        eperm = []
        for k in mesh.elements:
            e2 = elem_key.get(tuple(sorted(int(vperm[v]) for v in k.vids)))
            if e2 is None:
                break
            eperm.append(e2)
        if len(eperm) != len(mesh.elements):
            continue
        nperm = _point_permutation(space.node_coords, A, t, scale)
        if nperm is None:
            continue
        dofs = space.node_to_dof
        free = dofs >= 0
        if np.any(free != free[nperm]):
            continue
        dperm = np.empty(space.N, dtype=np.int64)
        dperm[dofs[free]] = dofs[nperm[free]]
        out.append((A, t, dperm, np.array(eperm)))
    return out


def _orbits(perms, n):
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for p in perms:
        for i in range(n):
            a, b = find(i), find(int(p[i]))
            if a != b:
                parent[max(a, b)] = min(a, b)
    roots = np.array([find(i) for i in range(n)])
    _, first, inv = np.unique(roots, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inv]


def trivial_reduction(space):
    n_el = len(space.mesh.elements)
    return Reduction(space.N, np.arange(space.N), space.N, list(range(n_el)), [1] * n_el, [])


def build_reduction(space, symmetries=None):
    """Orbit data for the given symmetries (default: all detected ones)."""
    syms = mesh_symmetries(space) if symmetries is None else symmetries
    if not syms:
        return trivial_reduction(space)
    dof_orbit = _orbits([s[2] for s in syms], space.N)
    n_el = len(space.mesh.elements)
    el_orbit = _orbits([s[3] for s in syms], n_el)
    reps, weight = [], []
    for o in range(el_orbit.max() + 1):
        members = np.nonzero(el_orbit == o)[0]
        reps.append(int(members[0]))
        weight.append(len(members))
    return Reduction(space.N, dof_orbit, int(dof_orbit.max()) + 1, reps, weight,
                     [(A, t) for A, t, _, _ in syms])


def invariant(reduction, space, values, tol=1e-12):
    """True if a DOF vector is constant on every orbit."""
    values = np.asarray(values)
    scale = tol * max(1.0, np.abs(values).max())
    ref = np.zeros(reduction.n)
    ref[reduction.dof_orbit] = values
    return bool(np.all(np.abs(values - ref[reduction.dof_orbit]) <= scale))
