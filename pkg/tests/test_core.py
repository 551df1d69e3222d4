import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_cloud
from pcrecomb.core import (
    Aabb,
    ObjectRecord,
    PointCloud,
    SceneRecord,
    SimilarityTransform,
    TriangleMesh,
    centroid,
    rot_z,
    transform_cloud,
    wrap_angle,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
points = arrays(np.float64, st.tuples(st.integers(2, 30), st.just(3)), elements=finite)


def rotation(draw_angles):
    a, b, c = draw_angles
    rx = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
    ry = np.array([[math.cos(b), 0, math.sin(b)], [0, 1, 0], [-math.sin(b), 0, math.cos(b)]])
    return rot_z(c) @ ry @ rx


transforms = st.builds(
    lambda ang, tr, s: SimilarityTransform(rotation(ang), np.array(tr), s),
    st.tuples(*[st.floats(-math.pi, math.pi)] * 3),
    st.tuples(*[st.floats(-100, 100)] * 3),
    st.floats(0.1, 10),
)


def test_pointcloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])


def test_pointcloud_rejects_attribute_length_mismatch():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), {"intensity": np.zeros(2)})


def test_pointcloud_arrays_are_frozen():
    c = PointCloud(np.zeros((2, 3)), {"intensity": np.ones(2)})
    with pytest.raises(ValueError):
        c.positions[0, 0] = 1.0
    with pytest.raises(ValueError):
        c["intensity"][0] = 5.0


def test_pointcloud_select_keeps_attributes(rng):
    c = random_cloud(rng, 10)
    s = c.select([1, 3])
    assert np.array_equal(s.positions, c.positions[[1, 3]])
    assert np.array_equal(s["ring"], c["ring"][[1, 3]])
    assert s.schema() == c.schema()


def test_empty_cloud_keeps_schema():
    e = PointCloud.empty({"intensity": np.float32, "ring": np.uint16})
    assert len(e) == 0
    assert e.schema() == {"intensity": np.dtype(np.float32), "ring": np.dtype(np.uint16)}


def test_mesh_rejects_repeated_vertex():
    with pytest.raises(ValueError, match="degenerate"):
        TriangleMesh(np.eye(3), [[0, 0, 1]])


def test_mesh_rejects_bad_index():
    with pytest.raises(ValueError, match="out of range"):
        TriangleMesh(np.eye(3), [[0, 1, 3]])


def test_similarity_rejects_reflection_and_bad_scale():
    with pytest.raises(ValueError):
        SimilarityTransform(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        SimilarityTransform(np.eye(3) * 1.1)
    with pytest.raises(ValueError):
        SimilarityTransform(scale=0.0)


def test_identity_transform_keeps_cloud(rng):
    c = random_cloud(rng, 50)
    assert transform_cloud(c, SimilarityTransform.identity()).equals(c)


def test_rotate_unit_x_by_90():
    c = transform_cloud(PointCloud([[1.0, 0.0, 0.0]]), SimilarityTransform(rot_z(math.pi / 2)))
    assert np.allclose(c.positions, [[0, 1, 0]], atol=1e-12, rtol=0)


def test_transform_round_trip(rng):
    c = random_cloud(rng, 100)
    t = SimilarityTransform(rotation(rng.uniform(-3, 3, 3)), rng.normal(0, 10, 3), 2.5)
    back = transform_cloud(transform_cloud(c, t), t.inverse())
    assert np.max(np.abs(back.positions - c.positions)) < 1e-9
    assert back["intensity"].tobytes() == c["intensity"].tobytes()


@given(points, transforms)
def test_pairwise_distances_scale_exactly(p, t):
    q = t.apply(p)
    d0 = np.linalg.norm(p[:, None] - p[None], axis=2)
    d1 = np.linalg.norm(q[:, None] - q[None], axis=2)
    assert np.allclose(d1, t.scale * d0, rtol=1e-9, atol=1e-9 * max(1.0, d0.max()) * t.scale)


@given(points, transforms, transforms)
def test_compose_matches_sequential_application(p, a, b):
    ref = a.apply(b.apply(p))
    assert np.allclose(a.compose(b).apply(p), ref, rtol=1e-9, atol=1e-7)


def test_attributes_untouched_by_transform(rng):
    c = random_cloud(rng, 20)
    out = transform_cloud(c, SimilarityTransform.from_yaw(0.3, (1, 2, 3), 2.0))
    for k in c.attribute_names:
        assert out[k].tobytes() == c[k].tobytes()
    assert out.attribute_names == c.attribute_names


def test_centroid_examples(rng):
    assert np.array_equal(centroid(PointCloud([[0, 0, 0], [2, 0, 0]])), [1, 0, 0])
    assert np.array_equal(centroid(PointCloud([[1.5, -2, 3]])), [1.5, -2, 3])
    cube = rng.uniform(4.5, 5.5, (1000, 3))
    assert np.all(np.abs(centroid(PointCloud(cube)) - 5) < 0.1)
    with pytest.raises(ValueError, match="empty point set"):
        centroid(PointCloud.empty())


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w < math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-6)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-6)


def test_wrap_angle_pi_maps_to_minus_pi():
    assert wrap_angle(math.pi) == -math.pi
    assert math.isclose(wrap_angle(3.5 * math.pi), -0.5 * math.pi)


def test_aabb():
    with pytest.raises(ValueError):
        Aabb([1, 0, 0], [0, 1, 1])
    box = Aabb([0, 0, 0], [1, 1, 1])
    assert box.contains([[1, 1, 1], [0, 0, 0], [1.0000001, 0, 0]]).tolist() == [True, True, False]
    assert np.array_equal(box.union(Aabb([2, 2, 2], [3, 3, 3])).max, [3, 3, 3])


def test_object_record_invariants():
    cloud = PointCloud([[4, 0, 0], [6, 0, 0]])
    rec = ObjectRecord(cloud, "m", "t", [5, 0, 0], 0.0)
    assert rec.range == 5.0 and rec.azimuth == 0.0
    with pytest.raises(ValueError):
        ObjectRecord(cloud, "m", "t", [5, 0.01, 0], 0.0)
    with pytest.raises(ValueError):
        ObjectRecord(cloud, "m", "t", [5, 0, 0], math.pi)
    # empty cloud: metadata only
    ObjectRecord(PointCloud.empty(), "m", "t", [1, 2, 3], -math.pi)


def test_scene_record_requires_positive_height():
    with pytest.raises(ValueError):
        SceneRecord(PointCloud.empty(), 0.0)


def test_mesh_merge_and_bounds():
    a = TriangleMesh(np.eye(3), [[0, 1, 2]])
    b = TriangleMesh(np.eye(3) + 5, [[0, 1, 2]])
    m = TriangleMesh.merge([a, b])
    assert len(m) == 2 and m.triangles[1].tolist() == [3, 4, 5]
    assert np.array_equal(m.bounds().max, [6, 6, 6])
    assert np.isclose(m.areas().sum(), 2 * math.sqrt(3) / 2)
