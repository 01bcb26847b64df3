"""Polygons, boundary distances and the vertex/edge neighborhood partition."""

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Raised for invalid polygons, degenerate points or bad parameters."""


def _seg_dist(p, a, b):
    """Distance from points ``p`` (..., 2) to the closed segment [a, b]."""
    p = np.asarray(p, dtype=float)
    d = b - a
    t = np.clip(((p - a) @ d) / (d @ d), 0.0, 1.0)
    foot = a + t[..., None] * d
    return np.linalg.norm(p - foot, axis=-1)


def _segments_intersect(a, b, c, d):
    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    if o1 != o2 and o3 != o4:
        return True
    # collinear overlaps are reported as intersections as well
    for o, p, q, r in ((o1, a, b, c), (o2, a, b, d), (o3, c, d, a), (o4, c, d, b)):
        if o == 0 and min(p[0], q[0]) <= r[0] <= max(p[0], q[0]) \
                and min(p[1], q[1]) <= r[1] <= max(p[1], q[1]):
            return True
    return False


class Polygon:
    """Simple counterclockwise polygon.

    Edge ``i`` runs from vertex ``i`` to vertex ``i + 1`` (cyclically), so
    the edges meeting at vertex ``v`` are ``v - 1`` and ``v``.
    """

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("a polygon needs at least 3 vertices given as (x, y) pairs")
        if not np.all(np.isfinite(v)):
            raise GeometryError("vertex coordinates must be finite")
        v.setflags(write=False)
        self.vertices = v
        n = len(v)
        if self.signed_area() <= 0:
            raise GeometryError("vertices must be in counterclockwise order")
        scale = self.diameter()
        for i in range(n):
            a, b, c = v[i - 1], v[i], v[(i + 1) % n]
            cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
            if abs(cross) <= 1e-12 * scale ** 2:
                raise GeometryError(f"vertices {(i - 1) % n}, {i}, {(i + 1) % n} are collinear")
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise GeometryError(f"edges {i} and {j} intersect")

    @property
    def n(self):
        return len(self.vertices)

    def edge(self, i):
        return self.vertices[i % self.n], self.vertices[(i + 1) % self.n]

    def edges(self):
        return [self.edge(i) for i in range(self.n)]

    def edges_at_vertex(self, v):
        return [(v - 1) % self.n, v % self.n]

    def vertices_of_edge(self, e):
        return [e % self.n, (e + 1) % self.n]

    def signed_area(self):
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def area(self):
        return abs(self.signed_area())

    def diameter(self):
        d = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def edge_lengths(self):
        return np.linalg.norm(np.roll(self.vertices, -1, axis=0) - self.vertices, axis=1)

    def interior_angles(self):
        """Opening angle of the polygon at each vertex, in (0, 2 pi)."""
        v = self.vertices
        prev = np.roll(v, 1, axis=0) - v
        nxt = np.roll(v, -1, axis=0) - v
        a_prev = np.arctan2(prev[:, 1], prev[:, 0])
        a_next = np.arctan2(nxt[:, 1], nxt[:, 0])
        return np.mod(a_prev - a_next, 2 * np.pi)

    def contains(self, p, strict=True, tol=0.0):
        """Even-odd point-in-polygon test; ``strict`` excludes points within ``tol`` of the boundary."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        inside = np.zeros(len(p), dtype=bool)
        v = self.vertices
        for i in range(self.n):
            (x1, y1), (x2, y2) = v[i], v[(i + 1) % self.n]
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xint)
        if strict:
            inside &= self.boundary_distance(p, check=False) > tol
        return inside

    def boundary_distance(self, p, check=True):
        """Euclidean distance ``r(p)`` to the boundary; ``p`` may be a batch."""
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        p2 = np.atleast_2d(p)
        d = np.min([_seg_dist(p2, a, b) for a, b in self.edges()], axis=0)
        if check:
            if np.any(d <= 0) or not np.all(self.contains(p2, strict=False)):
                raise GeometryError("point lies outside the polygon or on its boundary")
        return float(d[0]) if single else d

    def vertex_edge_distances(self, v, e, p):
        """Return ``(r_v, r_e, rho_ve)`` for vertex ``v``, edge ``e`` and point ``p``."""
        p = np.asarray(p, dtype=float)
        r_v = np.linalg.norm(p - self.vertices[v % self.n], axis=-1)
        a, b = self.edge(e)
        r_e = _seg_dist(p, a, b)
        if np.any(r_v == 0):
            raise GeometryError("rho_ve is undefined at the vertex itself")
        rho = r_e / r_v
        if p.ndim == 1:
            return float(r_v), float(r_e), float(rho)
        return r_v, r_e, rho

    def default_xi(self):
        """Neighborhood parameter ``xi = min(shortest edge, min_v sin(angle_v / 2) * incident edge) / 4``."""
        lengths = self.edge_lengths()
        angles = self.interior_angles()
        cand = [lengths.min()]
        for v in range(self.n):
            inc = min(lengths[(v - 1) % self.n], lengths[v])
            cand.append(np.sin(min(angles[v], np.pi) / 2) * inc)
        return 0.25 * float(min(cand))

    def to_text(self):
        return "".join(f"{float(x)!r} {float(y)!r}\n" for x, y in self.vertices)

    @classmethod
    def from_text(cls, text):
        pts = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                parts = line.split()
                if len(parts) != 2:
                    raise GeometryError(f"expected 'x y' per line, got {line!r}")
                pts.append([float(parts[0]), float(parts[1])])
        return cls(pts)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def unit_square():
    return Polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])


def l_shape():
    """L-shaped domain with the reentrant corner at the origin."""
    return Polygon([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (0.0, -1.0)])


PRESETS = {"square": unit_square, "lshape": l_shape}


def preset_polygon(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise GeometryError(f"unknown polygon preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class RegionTag:
    kind: str  # "vertex", "vertex-edge", "edge" or "interior"
    vertex: int = None
    edge: int = None


class NeighborhoodConfig:
    """Common neighborhood parameter ``xi`` for one polygon.

    Construction checks sufficient conditions for the vertex, vertex-edge and
    edge neighborhoods of distinct vertices and edges to be disjoint.
    """

    def __init__(self, poly, xi=None):
        xi = poly.default_xi() if xi is None else float(xi)
        if not 0 < xi < 1:
            raise GeometryError("xi must lie in (0, 1)")
        v = poly.vertices
        n = poly.n
        angles = poly.interior_angles()
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(v[i] - v[j]) <= 2 * xi:
                    raise GeometryError(f"xi={xi} too large: vertex balls {i} and {j} overlap")
            if angles[i] < np.pi and xi >= np.sin(angles[i] / 2):
                raise GeometryError(f"xi={xi} too large for the opening angle at vertex {i}")
            for e in range(n):
                if i in poly.vertices_of_edge(e):
                    continue
                a, b = poly.edge(e)
                if _seg_dist(v[i], a, b) <= 2 * xi:
                    raise GeometryError(f"xi={xi} too large: vertex {i} is close to edge {e}")
        for e in range(n):
            for f in range(e + 1, n):
                if set(poly.vertices_of_edge(e)) & set(poly.vertices_of_edge(f)):
                    continue
                a, b = poly.edge(e)
                c, d = poly.edge(f)
                gap = min(_seg_dist(a, c, d), _seg_dist(b, c, d), _seg_dist(c, a, b), _seg_dist(d, a, b))
                if gap <= 2 * xi ** 2:
                    raise GeometryError(f"xi={xi} too large: edge strips {e} and {f} overlap")
        self.poly = poly
        self.xi = xi


def classify(poly, cfg, p):
    """Tag ``p`` as vertex, vertex-edge, edge or interior point.

    Predicates are tested in the order vertex, vertex-edge, edge so that
    points on the borders between neighborhoods get a deterministic tag.
    """
    p = np.asarray(p, dtype=float)
    xi = cfg.xi
    poly.boundary_distance(p)  # validates that p is interior
    r_v = np.linalg.norm(poly.vertices - p, axis=1)
    for v in np.argsort(r_v, kind="stable"):
        if r_v[v] >= xi:
            break
        v = int(v)
        rhos = [(poly.vertex_edge_distances(v, e, p)[2], e) for e in poly.edges_at_vertex(v)]
        if all(rho >= xi for rho, _ in rhos):
            return RegionTag("vertex", vertex=v)
        rho, e = min(rhos)
        return RegionTag("vertex-edge", vertex=v, edge=int(e))
    for e in range(poly.n):
        a, b = poly.edge(e)
        if _seg_dist(p, a, b) < xi ** 2 and all(r_v[w] >= xi for w in poly.vertices_of_edge(e)):
            return RegionTag("edge", edge=e)
    return RegionTag("interior")
