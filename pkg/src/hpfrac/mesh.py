"""Geometric boundary-refined meshes built from reference refinement patterns.

A macro triangulation of the polygon assigns to every macro element one of
four reference patterns (trivial, edge, vertex, vertex-edge).  Each pattern
is a mesh of the reference square ``S = (0,1)^2`` or the reference triangle
``T = conv{(0,0), (1,0), (1,1)}`` that is graded with factor ``sigma`` over
``L`` layers towards the origin and/or the side ``{y = 0}``.  The global mesh
is obtained by transporting the patterns with the macro element maps.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, Polygon, preset_polygon

TRIVIAL, VERTEX, EDGE, VERTEX_EDGE = "trivial", "vertex", "edge", "vertex-edge"
PATCH_KINDS = (TRIVIAL, VERTEX, EDGE, VERTEX_EDGE)
TRI, RECT = "triangle", "rectangle"


class MeshError(ValueError):
    """Invalid mesh parameters or macro triangulations."""


@dataclass(frozen=True)
class MeshParams:
    sigma: float
    levels: int

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise MeshError("sigma must lie in (0, 1)")
        if int(self.levels) != self.levels or self.levels < 0:
            raise MeshError("levels must be a nonnegative integer")


@dataclass
class RefElement:
    """Element of a reference patch.

    ``verts`` are listed counterclockwise; for rectangles ``verts[0]`` is the
    lower left corner, for triangles the affine map sends (0,0), (1,0), (1,1)
    to ``verts[0], verts[1], verts[2]``.
    """

    shape: str
    verts: np.ndarray
    layer_index: int
    touches_singular_set: bool = False

    @property
    def affine_map(self):
        """Return ``(J, b)`` with ``x = b + J @ xhat``."""
        v = self.verts
        if self.shape == TRI:
            return np.column_stack([v[1] - v[0], v[2] - v[1]]), v[0].copy()
        return np.column_stack([v[1] - v[0], v[3] - v[0]]), v[0].copy()

    @property
    def h_par(self):
        return float(np.linalg.norm(self.verts[1] - self.verts[0]))

    @property
    def h_perp(self):
        return float(np.linalg.norm(self.verts[-1] - self.verts[0]))

    @property
    def diameter(self):
        d = self.verts[:, None] - self.verts[None]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def area(self):
        return polygon_area(self.verts)


@dataclass
class RefPatchMesh:
    kind: str
    params: MeshParams
    elements: list

    @property
    def boundary_elements(self):
        return [k for k in self.elements if k.touches_singular_set]

    @property
    def interior_elements(self):
        return [k for k in self.elements if not k.touches_singular_set]


def polygon_area(verts):
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _rect(x0, x1, y0, y1, layer, touches):
    v = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
    return RefElement(RECT, v, layer, touches)


def _tri(a, b, c, layer, touches):
    return RefElement(TRI, np.array([a, b, c], dtype=float), layer, touches)


def build_reference_patch(kind, params):
    """Reference refinement pattern of the given kind."""
    s, L = params.sigma, params.levels
    if kind not in PATCH_KINDS:
        raise MeshError(f"unknown patch kind {kind!r}")
    if L == 0 and kind != TRIVIAL:
        raise MeshError(f"L = 0 is only meaningful for the trivial pattern, got {kind!r}")
    p = [s ** i for i in range(L + 1)]
    els = []
    if kind == TRIVIAL:
        els.append(_rect(0.0, 1.0, 0.0, 1.0, 0, False))
    elif kind == EDGE:
        for i in range(L):
            els.append(_rect(0.0, 1.0, p[i + 1], p[i], i, False))
        els.append(_rect(0.0, 1.0, 0.0, p[L], L, True))
    elif kind == VERTEX:
        for i in range(L):
            a, b = p[i + 1], p[i]
            els.append(_tri((a, 0.0), (b, 0.0), (a, a), i, False))
            els.append(_tri((b, 0.0), (b, b), (a, a), i, False))
        els.append(_tri((0.0, 0.0), (p[L], 0.0), (p[L], p[L]), L, True))
    else:
        for i in range(L):
            a, b = p[i + 1], p[i]
            els.append(_tri((a, a), (b, a), (b, b), i, False))
            for j in range(i + 1, L):
                els.append(_rect(a, b, p[j + 1], p[j], j, False))
            els.append(_rect(a, b, 0.0, p[L], L, True))
        els.append(_tri((0.0, 0.0), (p[L], 0.0), (p[L], p[L]), L, True))
    return RefPatchMesh(kind, params, els)


@dataclass
class MacroElement:
    """Macro element with its patch kind and the map from the reference domain.

    ``corners`` are the images of (0,0), (1,0), (1,1) for triangular patches
    and of (0,0), (1,0), (1,1), (0,1) for square patches.  Triangular and
    parallelogram patches use the affine interpolant of the corners; a general
    quadrilateral (trivial patches only) uses the bilinear one.
    """

    kind: str
    corners: np.ndarray

    @property
    def is_triangle(self):
        return len(self.corners) == 3

    @property
    def is_affine(self):
        c = self.corners
        return self.is_triangle or np.allclose(c[0] + c[2], c[1] + c[3], atol=1e-12)

    def affine(self):
        c = self.corners
        if not self.is_affine:
            raise MeshError("bilinear macro element has no affine map")
        if self.is_triangle:
            return np.column_stack([c[1] - c[0], c[2] - c[1]]), c[0].copy()
        return np.column_stack([c[1] - c[0], c[3] - c[0]]), c[0].copy()

    def __call__(self, xhat):
        xhat = np.asarray(xhat, dtype=float)
        if self.is_affine:
            J, b = self.affine()
            return xhat @ J.T + b
        c = self.corners
        x, y = xhat[..., :1], xhat[..., 1:]
        return (1 - x) * (1 - y) * c[0] + x * (1 - y) * c[1] + x * y * c[2] + (1 - x) * y * c[3]


def _on_boundary(poly, pts, tol):
    return poly.boundary_distance(np.atleast_2d(pts), check=False) <= tol


def _polygon_vertex_index(poly, p, tol):
    d = np.linalg.norm(poly.vertices - p, axis=1)
    i = int(np.argmin(d))
    return i if d[i] <= tol else None


def _segment_on_boundary(poly, a, b, tol):
    pts = a + np.linspace(0, 1, 9)[:, None] * (b - a)
    return bool(np.all(_on_boundary(poly, pts, tol)))


def classify_macro(poly, corners, tol=None):
    """Classify a macro element by its contact with the boundary.

    Returns ``(kind, corners)`` with the corners reordered so that the
    reference origin and the reference side ``{y = 0}`` map onto the contact.
    """
    c = np.asarray(corners, dtype=float)
    tol = 1e-10 * poly.diameter() if tol is None else tol
    n = len(c)
    if n not in (3, 4):
        raise MeshError("macro elements must be triangles or quadrilaterals")
    if polygon_area(c) <= 0:
        raise MeshError("macro element corners must be counterclockwise")
    on = _on_boundary(poly, c, tol)
    bedges = [i for i in range(n) if on[i] and on[(i + 1) % n]
              and _segment_on_boundary(poly, c[i], c[(i + 1) % n], tol)]
    # contact through edge interiors without a corner on the boundary is not allowed
    for i in range(n):
        a, b = c[i], c[(i + 1) % n]
        if i not in bedges:
            for v in poly.vertices:
                t = np.dot(v - a, b - a) / np.dot(b - a, b - a)
                if 1e-9 < t < 1 - 1e-9 and np.linalg.norm(a + t * (b - a) - v) <= tol:
                    raise MeshError("macro element edge passes through a polygon vertex")
    if len(bedges) > 1:
        raise MeshError("macro element touches the boundary in more than one edge")
    if len(bedges) == 1:
        i = bedges[0]
        others = [k for k in range(n) if k not in (i, (i + 1) % n)]
        if any(on[k] for k in others):
            raise MeshError("macro element touches the boundary in an edge and a separate point")
        a, b = c[i], c[(i + 1) % n]
        va, vb = _polygon_vertex_index(poly, a, tol), _polygon_vertex_index(poly, b, tol)
        if va is None and vb is None:
            if n != 4:
                raise MeshError("edge patches must be quadrilaterals")
            return EDGE, np.roll(c, -i, axis=0)
        if va is not None and vb is not None:
            raise MeshError("macro element edge joins two polygon vertices")
        if n != 3:
            raise MeshError("vertex-edge patches must be triangles")
        if va is not None:
            # origin at a, (1,0) at b; orientation is reversed, which is allowed
            return VERTEX_EDGE, np.array([a, b, c[(i + 2) % 3]])
        return VERTEX_EDGE, np.array([b, a, c[(i + 2) % 3]])
    touching = [k for k in range(n) if on[k]]
    if len(touching) > 1:
        raise MeshError("macro element touches the boundary in two separate points")
    if len(touching) == 1:
        if n != 3:
            raise MeshError("vertex patches must be triangles")
        k = touching[0]
        return VERTEX, np.roll(c, -k, axis=0)
    return TRIVIAL, c


def square_fan(poly=None):
    """Eight vertex-edge patches: each boundary half-edge joined to the centroid."""
    poly = poly or preset_polygon("square")
    v = poly.vertices
    g = v.mean(axis=0)
    macros = []
    for i in range(poly.n):
        a, b = v[i], v[(i + 1) % poly.n]
        m = 0.5 * (a + b)
        macros.append(MacroElement(VERTEX_EDGE, np.array([a, m, g])))
        macros.append(MacroElement(VERTEX_EDGE, np.array([b, m, g])))
    return macros


def lshape_fan():
    """Macro triangulation of the L-shape on the grid of half-unit cells.

    Cells at convex corners are split along the diagonal through the corner
    into two vertex-edge patches; the two cells at the reentrant corner that
    have a boundary side carry one vertex-edge and one vertex patch; the cell
    diagonally opposite the notch carries two vertex patches; the remaining
    four cells touch one boundary side away from corners and are edge patches.
    """
    P = lambda x, y: np.array([x, y], dtype=float)  # noqa: E731
    macros = []
    ve = [
        ((1, 0), (0.5, 0), (0.5, 0.5)), ((1, 0), (1, 0.5), (0.5, 0.5)),
        ((1, 1), (1, 0.5), (0.5, 0.5)), ((1, 1), (0.5, 1), (0.5, 0.5)),
        ((-1, 1), (-0.5, 1), (-0.5, 0.5)), ((-1, 1), (-1, 0.5), (-0.5, 0.5)),
        ((-1, -1), (-1, -0.5), (-0.5, -0.5)), ((-1, -1), (-0.5, -1), (-0.5, -0.5)),
        ((0, -1), (-0.5, -1), (-0.5, -0.5)), ((0, -1), (0, -0.5), (-0.5, -0.5)),
        ((0, 0), (0.5, 0), (0.5, 0.5)), ((0, 0), (0, -0.5), (-0.5, -0.5)),
    ]
    for o, m, c in ve:
        macros.append(MacroElement(VERTEX_EDGE, np.array([P(*o), P(*m), P(*c)])))
    edge = [
        ((0.5, 1), (0, 1), (0, 0.5), (0.5, 0.5)),
        ((0, 1), (-0.5, 1), (-0.5, 0.5), (0, 0.5)),
        ((-1, 0.5), (-1, 0), (-0.5, 0), (-0.5, 0.5)),
        ((-1, 0), (-1, -0.5), (-0.5, -0.5), (-0.5, 0)),
    ]
    for q in edge:
        macros.append(MacroElement(EDGE, np.array([P(*x) for x in q])))
    vert = [
        ((0, 0), (0, 0.5), (0.5, 0.5)), ((0, 0), (0, 0.5), (-0.5, 0.5)),
        ((0, 0), (-0.5, 0), (-0.5, 0.5)), ((0, 0), (-0.5, 0), (-0.5, -0.5)),
    ]
    for t in vert:
        macros.append(MacroElement(VERTEX, np.array([P(*x) for x in t])))
    return macros


def macro_from_dict(poly, data):
    """Macro triangulation from ``{"vertices": [[x, y], ...], "elements": [[i, j, k(, l)], ...]}``.

    Patch kinds and reference alignments are inferred from the boundary contact.
    """
    pts = np.asarray(data["vertices"], dtype=float)
    macros = []
    for ids in data["elements"]:
        kind, corners = classify_macro(poly, pts[list(ids)])
        macros.append(MacroElement(kind, corners))
    return macros


MACRO_PRESETS = {"square-fan": ("square", square_fan), "lshape-fan": ("lshape", lambda poly=None: lshape_fan())}


def build_macro_triangulation(poly, preset, data=None):
    """Macro elements for ``preset`` in {square-fan, lshape-fan, from-file}.

    Every macro element is checked against the boundary-contact cases; the
    stored kind must agree with the inferred one.
    """
    if preset == "from-file":
        if data is None:
            raise MeshError("from-file preset needs macro data")
        macros = macro_from_dict(poly, data)
    elif preset in MACRO_PRESETS:
        macros = MACRO_PRESETS[preset][1](poly)
    else:
        raise MeshError(f"unknown macro preset {preset!r}")
    tol = 1e-10 * poly.diameter()
    for k, m in enumerate(macros):
        c = m.corners
        ccw = c if polygon_area(c) > 0 else c[::-1]
        kind, _ = classify_macro(poly, ccw, tol)
        if kind != m.kind:
            raise MeshError(f"macro element {k} is declared {m.kind} but its boundary contact makes it {kind}")
        if m.kind != TRIVIAL and not m.is_affine:
            raise MeshError(f"macro element {k}: only trivial patches may use a bilinear map")
        if m.kind in (VERTEX, VERTEX_EDGE) and not _on_boundary(poly, c[:1], tol)[0]:
            raise MeshError(f"macro element {k}: reference origin must map to the boundary")
        if m.kind in (EDGE, VERTEX_EDGE) and not _segment_on_boundary(poly, c[0], c[1], tol):
            raise MeshError(f"macro element {k}: reference side y=0 must map into the boundary")
    area = sum(abs(polygon_area(m.corners)) for m in macros)
    if abs(area - poly.area()) > 1e-10 * poly.area():
        raise MeshError("macro elements do not cover the polygon")
    return macros


@dataclass
class Element:
    """Physical element ``K = F_K(reference element)`` with ``F_K(xhat) = b + J xhat``."""

    shape: str
    verts: np.ndarray
    vids: tuple
    macro_id: int
    kind: str
    ref: RefElement
    J: np.ndarray = None
    b: np.ndarray = None
    layer: str = "Lint"

    @property
    def det(self):
        return float(np.linalg.det(self.J))

    @property
    def diameter(self):
        d = self.verts[:, None] - self.verts[None]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def area(self):
        return abs(polygon_area(self.verts))

    def edges(self):
        n = len(self.vids)
        return [(self.vids[i], self.vids[(i + 1) % n]) for i in range(n)]


@dataclass
class GlobalMesh:
    poly: Polygon
    params: MeshParams
    macro: list
    vertices: np.ndarray
    elements: list
    edge_table: dict = field(default_factory=dict)

    def layer_counts(self):
        out = {"L0": 0, "L1": 0, "Lint": 0}
        for k in self.elements:
            out[k.layer] += 1
        return out

    def total_area(self):
        return sum(k.area() for k in self.elements)

    def to_dict(self):
        return {
            "vertices": self.vertices.tolist(),
            "elements": [
                {"shape": k.shape, "vertices": list(map(int, k.vids)), "layer": k.layer,
                 "macro": k.macro_id, "patch": k.kind}
                for k in self.elements
            ],
            "params": {"sigma": self.params.sigma, "L": self.params.levels},
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


class _PointIndex:
    """Merge points that coincide up to ``tol`` by hashing on a grid of size ``tol``."""

    def __init__(self, tol):
        self.tol = tol
        self.grid = {}
        self.points = []

    def add(self, p):
        key = tuple(np.floor(np.asarray(p) / self.tol).astype(np.int64))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for idx in self.grid.get((key[0] + dx, key[1] + dy), ()):
                    if np.max(np.abs(self.points[idx] - p)) <= self.tol:
                        return idx
        idx = len(self.points)
        self.points.append(np.array(p, dtype=float))
        self.grid.setdefault(key, []).append(idx)
        return idx


def _orient_ccw(shape, v):
    """Reverse an element's vertex order if needed so it is counterclockwise.

    The first vertex is kept, so the element keeps its reference origin.
    """
    if polygon_area(v) > 0:
        return v, False
    return np.concatenate([v[:1], v[1:][::-1]]), True


def refine(poly, macro, params, check=True):
    """Transport each macro element's reference pattern into the polygon."""
    tol = 1e-9 * poly.diameter()
    index = _PointIndex(tol)
    elements = []
    for mid, m in enumerate(macro):
        patch = build_reference_patch(m.kind, params)
        for ref in patch.elements:
            v, _ = _orient_ccw(ref.shape, m(ref.verts))
            vids = tuple(index.add(p) for p in v)
            v = np.array([index.points[i] for i in vids])
            el = Element(ref.shape, v, vids, mid, m.kind, ref)
            if ref.shape == TRI:
                el.J, el.b = np.column_stack([v[1] - v[0], v[2] - v[1]]), v[0].copy()
            else:
                el.J, el.b = np.column_stack([v[1] - v[0], v[3] - v[0]]), v[0].copy()
                if m.is_affine and not np.allclose(v[0] + v[2], v[1] + v[3], atol=tol):
                    raise MeshError("rectangle is not mapped to a parallelogram")
            elements.append(el)
    verts = np.array(index.points)
    mesh = GlobalMesh(poly, params, macro, verts, elements)
    table = {}
    for e, k in enumerate(elements):
        for a, b in k.edges():
            table.setdefault((min(a, b), max(a, b)), []).append(e)
    mesh.edge_table = table
    if check:
        hanging = hanging_nodes(mesh)
        if hanging:
            raise MeshError(f"mesh has {len(hanging)} hanging nodes, e.g. at {verts[hanging[0][0]]}")
    assign_layers(mesh)
    return mesh


def hanging_nodes(mesh, tol=1e-12):
    """List ``(vertex, edge)`` pairs where a mesh vertex lies inside an element edge."""
    V = mesh.vertices
    out = []
    scale = tol * mesh.poly.diameter()
    for (a, b) in mesh.edge_table:
        pa, pb = V[a], V[b]
        d = pb - pa
        ll = d @ d
        t = (V - pa) @ d / ll
        foot = pa + t[:, None] * d
        dist = np.linalg.norm(V - foot, axis=1)
        inside = (t > 1e-12) & (t < 1 - 1e-12) & (dist <= scale)
        for vtx in np.nonzero(inside)[0]:
            out.append((int(vtx), (a, b)))
    return out


def assign_layers(mesh):
    """Tag elements L0 (closure meets the boundary), L1 (touches L0) or Lint."""
    tol = 1e-10 * mesh.poly.diameter()
    on = mesh.poly.boundary_distance(mesh.vertices, check=False) <= tol
    l0_vertices = np.zeros(len(mesh.vertices), dtype=bool)
    for k in mesh.elements:
        k.layer = "Lint"
        if on[list(k.vids)].any():
            k.layer = "L0"
            l0_vertices[list(k.vids)] = True
    for k in mesh.elements:
        if k.layer != "L0" and l0_vertices[list(k.vids)].any():
            k.layer = "L1"
    mesh.boundary_vertex_mask = on
    mesh.l0_vertex_mask = l0_vertices


def build_mesh(poly_or_name, preset, sigma, L, data=None):
    """Convenience wrapper: polygon, macro triangulation and refinement in one call."""
    if isinstance(poly_or_name, str):
        poly = preset_polygon(poly_or_name)
    else:
        poly = poly_or_name
    macro = build_macro_triangulation(poly, preset, data)
    return refine(poly, macro, MeshParams(sigma, L))


def preset_mesh(preset, sigma, L):
    if preset not in MACRO_PRESETS:
        raise MeshError(f"unknown macro preset {preset!r}")
    return build_mesh(MACRO_PRESETS[preset][0], preset, sigma, L)


class CutoffFunction:
    """Continuous degree-one function: 0 at vertices of L0 elements, 1 elsewhere.

    Linear on triangles and bilinear on parallelograms in the element's
    reference coordinates.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.values = np.where(mesh.l0_vertex_mask, 0.0, 1.0)

    def local(self, e, xhat):
        """Values and physical gradients on element ``e`` at reference points ``xhat`` (n, 2)."""
        k = self.mesh.elements[e]
        c = self.values[list(k.vids)]
        x, y = xhat[:, 0], xhat[:, 1]
        if k.shape == TRI:
            # nodal basis on T for vertices (0,0), (1,0), (1,1)
            val = c[0] * (1 - x) + c[1] * (x - y) + c[2] * y
            g = np.tile([c[1] - c[0], c[2] - c[1]], (len(x), 1))
        else:
            val = c[0] * (1 - x) * (1 - y) + c[1] * x * (1 - y) + c[2] * x * y + c[3] * (1 - x) * y
            g = np.column_stack([(c[1] - c[0]) * (1 - y) + (c[2] - c[3]) * y,
                                 (c[3] - c[0]) * (1 - x) + (c[2] - c[1]) * x])
        grad = g @ np.linalg.inv(k.J)
        return val, grad


def cutoff(mesh):
    return CutoffFunction(mesh)


def shape_regularity(verts):
    """Circumradius over inradius of a triangle (2 for the equilateral one)."""
    a = np.linalg.norm(verts[1] - verts[2])
    b = np.linalg.norm(verts[2] - verts[0])
    c = np.linalg.norm(verts[0] - verts[1])
    area = abs(polygon_area(np.asarray(verts)))
    s = 0.5 * (a + b + c)
    return (a * b * c / (4 * area)) / (area / s)


def mesh_report(mesh):
    """Summary statistics used by the command line ``mesh-report``."""
    tris = [k for k in mesh.elements if k.shape == TRI]
    return {
        "elements": len(mesh.elements),
        "vertices": len(mesh.vertices),
        "triangles": len(tris),
        "rectangles": len(mesh.elements) - len(tris),
        "layers": mesh.layer_counts(),
        "area": mesh.total_area(),
        "polygon_area": mesh.poly.area(),
        "hanging_nodes": len(hanging_nodes(mesh)),
        "max_triangle_shape_ratio": max((shape_regularity(k.verts) for k in tris), default=None),
        "patches": {kind: sum(m.kind == kind for m in mesh.macro) for kind in PATCH_KINDS},
    }


__all__ = [
    "GeometryError", "MeshError", "MeshParams", "RefElement", "RefPatchMesh", "MacroElement",
    "Element", "GlobalMesh", "build_reference_patch", "build_macro_triangulation", "refine",
    "cutoff", "preset_mesh", "build_mesh", "classify_macro", "hanging_nodes", "shape_regularity",
]
