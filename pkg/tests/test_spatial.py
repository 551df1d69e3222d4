import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import random_soup, unit_square
from pcrecomb.core import TriangleMesh
from pcrecomb.spatial import (
    NeighborIndex,
    RaycastIndex,
    Ray,
    build_neighbor_index,
    build_raycast_index,
    cast_rays,
    intersect_triangles,
    nearest,
)
from pcrecomb.synthgen import Box, Humanoid, SyntheticWorld, Terrain


def test_neighbor_index_single_point():
    idx = build_neighbor_index(np.array([[1.0, 2.0, 3.0]]))
    assert nearest(idx, [9, 9, 9])[0] == 0


def test_neighbor_index_self_query_is_zero(rng):
    pts = rng.normal(size=(100, 3))
    i, d = nearest(build_neighbor_index(pts), pts[17])
    assert i == 17 and d == 0.0


def test_neighbor_index_empty():
    with pytest.raises(ValueError, match="empty point set"):
        build_neighbor_index(np.zeros((0, 3)))


def test_neighbor_index_matches_brute_force(rng):
    pts = rng.uniform(-10, 10, (1000, 3))
    q = rng.uniform(-12, 12, (100, 3))
    _, d = NeighborIndex(pts).nearest(q)
    assert np.max(np.abs(d - oracles.nn_distances(q, pts))) <= 1e-12


def test_knn_and_radius_match_brute_force(rng):
    pts = rng.uniform(-1, 1, (500, 3))
    q = rng.uniform(-1, 1, (20, 3))
    idx = NeighborIndex(pts)
    full = np.linalg.norm(q[:, None] - pts[None], axis=2)
    _, d = idx.knn(q, 5)
    assert np.allclose(d, np.sort(full, axis=1)[:, :5], rtol=0, atol=1e-12)
    counts = idx.count_within(q, 0.3)
    assert counts.tolist() == (full <= 0.3).sum(axis=1).tolist()


def test_bounded_nearest_reports_misses(rng):
    pts = rng.uniform(0, 1, (100, 3))
    i, d = NeighborIndex(pts).nearest([[50.0, 50.0, 50.0], [0.5, 0.5, 0.5]], upper_bound=1.0)
    assert np.isinf(d[0]) and i[0] == 100 and np.isfinite(d[1])


def test_ray_requires_direction():
    with pytest.raises(ValueError):
        Ray((0, 0, 0), (0, 0, 0))


def test_single_triangle_hit_and_parallel_miss():
    tri = TriangleMesh([[5, -1, -1], [5, 1, -1], [5, 0, 1]], [[0, 1, 2]])
    idx = build_raycast_index(tri)
    hs = cast_rays(idx, np.zeros(3), np.array([[1.0, 0, 0], [0, 1.0, 0], [2.0, 0, 0]]))
    assert hs.t_hit[0] == pytest.approx(5.0, rel=1e-12)
    assert np.isinf(hs.t_hit[1])
    assert hs.t_hit[2] == pytest.approx(2.5, rel=1e-12)  # units of |direction|


def test_empty_mesh_rejected():
    with pytest.raises(ValueError):
        build_raycast_index(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)))


def test_origin_on_surface_pointing_away_misses():
    sq = unit_square(5.0)
    t = RaycastIndex(sq).cast(np.array([5.0, 0.1, 0.1]), np.array([[1.0, 0, 0]])).t_hit
    assert np.isinf(t[0])
    # pointing back through the surface it starts on: the hit at t=0 is discarded too
    t = RaycastIndex(sq).cast(np.array([5.0, 0.1, 0.1]), np.array([[-1.0, 0, 0]])).t_hit
    assert np.isinf(t[0])


def test_shared_edge_hits_exactly_one_triangle():
    sq = unit_square(5.0)
    v0, v1, v2 = sq.corners()
    # points on the diagonal y == z lie on the edge shared by both triangles
    for d in ([1.0, 0.0, 0.0], [1.0, 0.05, 0.05], [10.0, -0.6, -0.6], [5.0, 0.0, 0.3]):
        t = intersect_triangles(np.zeros(3), np.array(d), v0, v1, v2)
        assert np.isfinite(t).sum() == 1, d
    # and from behind (back faces)
    for d in ([-1.0, 0.0, 0.0], [-1.0, 0.05, 0.05]):
        t = intersect_triangles(np.array([10.0, 0, 0]), np.array(d), v0, v1, v2)
        assert np.isfinite(t).sum() == 1, d


def test_shared_edges_watertight_on_grid():
    # a fine axis-aligned grid of rays through a triangulated terrain: every ray hits
    m = Terrain(half_size=2.0, resolution=8, base_z=0.0, amplitude=0.0).mesh()
    xs = np.linspace(-1.5, 1.5, 49)
    gx, gy = np.meshgrid(xs, xs)
    o = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, 5.0)])
    t = RaycastIndex(m).cast(o, np.array([0.0, 0.0, -1.0])).t_hit
    assert np.all(np.isfinite(t))
    v0, v1, v2 = m.corners()
    top = v0[:, 2] > -0.1
    hits = np.isfinite(intersect_triangles(o[:, None], np.array([0.0, 0, -1]), v0[top], v1[top], v2[top]))
    assert np.all(hits.sum(axis=1) == 1)


def test_bvh_matches_brute_force_2000_triangles(rng):
    mesh = random_soup(rng, 2000, center=(0, 0, 0), spread=5, size=0.6)
    o = rng.uniform(-8, 8, (10_000, 3))
    d = rng.normal(size=(10_000, 3))
    got = RaycastIndex(mesh).cast(o, d).t_hit
    ref = oracles.first_hits(o, d, *mesh.corners())
    assert np.array_equal(np.isfinite(got), np.isfinite(ref))
    f = np.isfinite(ref)
    assert f.sum() > 1000
    assert np.max(np.abs(got[f] - ref[f]) / ref[f]) <= 1e-9


def test_box_ranges_match_analytic(rng):
    lo, hi = np.array([9.0, -1.0, -1.5]), np.array([11.0, 1.0, 1.0])
    m = Box(((lo + hi) / 2)[:2].tolist() + [lo[2]], tuple(hi - lo)).mesh()
    d = rng.normal([1, 0, 0], 0.2, (2000, 3))
    got = RaycastIndex(m).cast(np.zeros(3), d).t_hit
    ref = oracles.ray_box_t(d, lo, hi)
    assert np.array_equal(np.isfinite(got), np.isfinite(ref))
    f = np.isfinite(ref)
    assert np.max(np.abs(got[f] - ref[f]) / ref[f]) <= 1e-9


@given(st.integers(0, 2**32 - 1))
def test_bvh_property_random_worlds(seed):
    rng = np.random.default_rng(seed)
    mesh = random_soup(rng, int(rng.integers(1, 300)), spread=2.0, size=0.5)
    d = rng.normal([1, 0, 0], 0.3, (300, 3))
    got = RaycastIndex(mesh).cast(np.zeros(3), d).t_hit
    ref = oracles.first_hits(np.zeros(3), d, *mesh.corners())
    assert np.array_equal(np.isfinite(got), np.isfinite(ref))
    f = np.isfinite(ref)
    if f.any():
        assert np.max(np.abs(got[f] - ref[f]) / ref[f]) <= 1e-9


def test_cast_is_deterministic_and_ordered(rng):
    world = SyntheticWorld((Humanoid((6, 0, -1.5)), Box((10, 2, -1.5), (1, 1, 2))))
    idx = RaycastIndex(world.mesh())
    d = rng.normal([1, 0, 0], 0.2, (5000, 3))
    a = idx.cast(np.zeros(3), d)
    b = idx.cast(np.zeros(3), d)
    assert a.t_hit.tobytes() == b.t_hit.tobytes()
    perm = rng.permutation(len(d))
    c = idx.cast(np.zeros(3), d[perm])
    assert c.t_hit.tobytes() == a.t_hit[perm].tobytes()


def test_zero_direction_misses():
    idx = RaycastIndex(unit_square())
    t = idx.cast(np.zeros(3), np.array([[0.0, 0, 0], [1.0, 0, 0]])).t_hit
    assert np.isinf(t[0]) and np.isfinite(t[1])
