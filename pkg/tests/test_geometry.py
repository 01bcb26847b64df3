import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import qmc

from hpfrac.geometry import (GeometryError, NeighborhoodConfig, Polygon, RegionTag, classify, l_shape,
                             preset_polygon, unit_square)


def dense_boundary(poly, n):
    pts = []
    for a, b in poly.edges():
        t = np.linspace(0, 1, n, endpoint=False)[:, None]
        pts.append(a + t * (b - a))
    return np.concatenate(pts)


def test_square_center_and_near_edge():
    sq = unit_square()
    assert sq.boundary_distance((0.5, 0.5)) == pytest.approx(0.5, abs=1e-15)
    assert sq.boundary_distance((0.1, 0.5)) == pytest.approx(0.1, abs=1e-15)


def test_lshape_reentrant_distance_against_sampling():
    ls = l_shape()
    # the point (0.05, -0.05) lies in the removed quadrant; its mirror image is inside
    with pytest.raises(GeometryError):
        ls.boundary_distance((0.05, -0.05))
    p = np.array([-0.05, 0.05])
    d = ls.boundary_distance(p)
    samples = dense_boundary(ls, 100000 // 6 + 1)
    brute = np.min(np.linalg.norm(samples - p, axis=1))
    assert d == pytest.approx(np.hypot(0.05, 0.05), rel=1e-12)
    assert abs(d - brute) <= 1e-4 * d


def test_boundary_distance_rejects_outside_and_boundary():
    sq = unit_square()
    with pytest.raises(GeometryError):
        sq.boundary_distance((1.5, 0.5))
    with pytest.raises(GeometryError):
        sq.boundary_distance((0.0, 0.5))
    ls = l_shape()
    with pytest.raises(GeometryError):
        ls.boundary_distance((0.5, -0.5))


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_boundary_distance_matches_edge_minimum(x, y):
    for poly in (unit_square(), l_shape()):
        p = np.array([x, y])
        if not poly.contains(p, strict=True, tol=1e-6)[0]:
            continue
        d = poly.boundary_distance(p)
        r_e = [poly.vertex_edge_distances(poly.vertices_of_edge(e)[0], e, p)[1] for e in range(poly.n)]
        assert d == pytest.approx(min(r_e), rel=1e-14)
        n = 2000
        brute = np.min(np.linalg.norm(dense_boundary(poly, n) - p, axis=1))
        # sampling error bound for spacing h: sqrt(d^2 + h^2/4) - d <= h^2 / (8 d)
        h = poly.edge_lengths().max() / n
        assert brute >= d * (1 - 1e-12)
        assert brute - d <= h * h / (8 * d) + 1e-8 * d


def test_vertex_edge_distances_examples():
    sq = unit_square()
    r_v, r_e, rho = sq.vertex_edge_distances(0, 0, (0.3, 0.4))
    assert (r_v, r_e, rho) == pytest.approx((0.5, 0.4, 0.8), abs=1e-15)
    r_v, r_e, rho = sq.vertex_edge_distances(0, 0, (0.4, 0.0))
    assert r_e == 0 and rho == 0
    r_v, r_e, rho = sq.vertex_edge_distances(0, 0, (0.2, 0.1))
    assert r_v == pytest.approx(np.sqrt(0.05), rel=1e-15)
    assert r_e == pytest.approx(0.1, rel=1e-15)
    # sampled infimum over the edge
    t = np.linspace(0, 1, 100001)
    inf = np.min(np.hypot(t - 0.2, 0.1))
    assert rho == pytest.approx(inf / np.sqrt(0.05), rel=1e-8)


def test_rho_symmetric_on_bisector():
    sq = unit_square()
    for t in (0.01, 0.1, 0.3):
        p = (t, t)
        rhos = [sq.vertex_edge_distances(0, e, p)[2] for e in sq.edges_at_vertex(0)]
        assert rhos[0] == pytest.approx(rhos[1], rel=1e-14)


def test_classify_examples():
    sq = unit_square()
    cfg = NeighborhoodConfig(sq, 0.25)
    assert classify(sq, cfg, (0.5, 0.5)) == RegionTag("interior")
    assert classify(sq, cfg, (0.5, 0.03)) == RegionTag("edge", edge=0)
    # r_v = 0.1 < xi and rho = 0.5 >= xi for both edges
    p = 0.1 * np.array([np.cos(np.pi / 4), np.sin(np.pi / 4)])
    rho = sq.vertex_edge_distances(0, 0, p)[2]
    assert rho >= 0.25
    assert classify(sq, cfg, p) == RegionTag("vertex", vertex=0)
    tag = classify(sq, cfg, (0.1, 0.01))
    assert tag.kind == "vertex-edge" and tag.vertex == 0 and tag.edge == 0


@pytest.mark.parametrize("name", ["square", "lshape"])
def test_partition_property(name):
    poly = preset_polygon(name)
    cfg = NeighborhoodConfig(poly)
    lo, hi = poly.vertices.min(0), poly.vertices.max(0)
    pts = qmc.scale(qmc.Halton(2, seed=1).random(10000), lo, hi)
    pts = pts[poly.contains(pts, strict=True, tol=1e-12)]
    assert len(pts) > 5000
    counts = {}
    for p in pts:
        tag = classify(poly, cfg, p)
        assert tag.kind in ("vertex", "vertex-edge", "edge", "interior")
        counts[tag.kind] = counts.get(tag.kind, 0) + 1
    assert sum(counts.values()) == len(pts)
    assert counts["interior"] > 0


def test_default_xi_is_valid_for_presets():
    for poly in (unit_square(), l_shape()):
        cfg = NeighborhoodConfig(poly)
        assert 0 < cfg.xi < 1
    assert NeighborhoodConfig(unit_square()).xi == pytest.approx(0.25 * np.sin(np.pi / 4))


def test_invalid_polygons():
    with pytest.raises(GeometryError):
        Polygon([(0, 0), (1, 0)])
    with pytest.raises(GeometryError):
        Polygon([(0, 0), (0, 1), (1, 1), (1, 0)])  # clockwise
    with pytest.raises(GeometryError):
        Polygon([(0, 0), (0.5, 0), (1, 0), (1, 1)])  # collinear
    with pytest.raises(GeometryError):
        Polygon([(0, 0), (1, 1), (1, 0), (0, 1)])  # bow tie
    with pytest.raises(GeometryError):
        NeighborhoodConfig(unit_square(), 0.9)


def test_text_round_trip(tmp_path):
    ls = l_shape()
    path = tmp_path / "poly.txt"
    ls.save(path)
    back = Polygon.load(path)
    assert np.array_equal(back.vertices, ls.vertices)
