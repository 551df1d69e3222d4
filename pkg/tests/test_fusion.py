import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud
from pcrecomb.core import ObjectRecord, PointCloud, SceneRecord
from pcrecomb.errors import AttributeConflictError, OffGridAzimuthError
from pcrecomb.fusion import (
    SCENE_TAG,
    labels_to_json,
    make_label,
    place_at_azimuth,
    recombine,
    recombine_sequential,
)
from pcrecomb.occlusion import OcclusionResult, compute_occlusion
from pcrecomb.synthgen import Box, Humanoid, VirtualScanner, render_object_in_lab

SMALL = VirtualScanner(channels=32, resolution=512)


def record(cloud, yaw=0.0, mesh_id="m"):
    return ObjectRecord(cloud, mesh_id, "thing", cloud.positions.mean(axis=0) if len(cloud) else [5, 0, 0], yaw)


def occ_of(cloud, idx):
    idx = np.asarray(idx, dtype=np.int64)
    return OcclusionResult(idx, cloud.select(idx) if len(idx) else PointCloud.empty())


def test_counts_example(rng):
    scene = random_cloud(rng, 10)
    obj = record(random_cloud(rng, 5))
    r = recombine(SceneRecord(scene, 1.5), obj, occ_of(scene, [1, 4, 8]))
    assert len(r.cloud) == 12 and r.n_scene == 7 and r.n_object == 5
    assert (r.provenance == SCENE_TAG).sum() == 7 and (r.provenance == "m").sum() == 5
    # scene first, object appended
    assert r.provenance[:7].tolist() == [SCENE_TAG] * 7
    assert np.array_equal(r.cloud.positions[7:], obj.cloud.positions)
    assert r.object_mask().sum() == 5 and r.object_mask("m").sum() == 5


def test_empty_object_keeps_scene_and_emits_label(rng):
    scene = random_cloud(rng, 10)
    mesh = Box((5, 0, 0), (1, 1, 1)).mesh()
    obj = ObjectRecord(PointCloud.empty(scene.schema()), "m", "box", [5, 0, 0.5], 0.0)
    r = recombine(scene, obj, occ_of(scene, []), mesh)
    assert r.cloud.equals(scene)
    assert len(r.labels) == 1


def test_attribute_conflict(rng):
    scene = PointCloud(rng.normal(size=(4, 3)), {"intensity": np.ones(4, np.float32)})
    obj_cloud = PointCloud(rng.normal(size=(2, 3)), {"intensity": np.ones(2, np.float64)})
    with pytest.raises(AttributeConflictError, match="intensity"):
        recombine(scene, record(obj_cloud), occ_of(scene, []))


def test_missing_attributes_filled_and_reported(rng):
    scene = PointCloud(rng.normal(size=(4, 3)), {"ring": np.arange(4, dtype=np.uint16)})
    obj_cloud = PointCloud(rng.normal(size=(2, 3)), {"intensity": np.full(2, 7, np.float32)})
    r = recombine(scene, record(obj_cloud), occ_of(scene, []))
    assert list(r.cloud.attribute_names) == ["ring", "intensity"]
    assert r.cloud["ring"].tolist() == [0, 1, 2, 3, 0, 0]
    assert r.cloud["intensity"].tolist() == [0, 0, 0, 0, 7, 7]
    assert set(r.filled_attributes) == {"scene:intensity", "object:ring"}


def test_attribute_fidelity(rng):
    scene = random_cloud(rng, 50)
    obj = record(random_cloud(rng, 20))
    r = recombine(scene, obj, occ_of(scene, [0, 10, 20]))
    for name in obj.cloud.attribute_names:
        assert r.cloud[name][r.n_scene:].tobytes() == obj.cloud[name].tobytes()


def test_label_cube_examples():
    cube = Box((0, 0, 0), (1, 1, 1)).mesh()
    obj = ObjectRecord(PointCloud.empty(), "cube", "box", [0, 0, 0.5], 0.0)
    b = make_label(obj, cube)
    assert np.allclose(b.center, (0, 0, 0.5), atol=1e-12)
    assert np.allclose(b.half_extents, (0.5, 0.5, 0.5), atol=1e-12)
    rotated = Box((0, 0, 0), (1, 1, 1), math.pi / 4).mesh()
    b45 = make_label(ObjectRecord(PointCloud.empty(), "cube", "box", [0, 0, 0.5], math.pi / 4), rotated)
    assert np.allclose(b45.half_extents, (0.5, 0.5, 0.5), atol=1e-12)
    assert b45.yaw == pytest.approx(math.pi / 4)


def test_label_contains_humanoid_points():
    obj, mesh = render_object_in_lab(Humanoid(yaw=0.6), SMALL, 6.0, 0.3)
    assert len(obj.cloud) > 50
    box = make_label(obj, mesh)
    assert box.contains(obj.cloud.positions, tol=0.01).all()
    assert all(h > 0 for h in box.half_extents)
    data = json.loads(labels_to_json([box], frame="f0"))
    assert data["frame"] == "f0" and data["boxes"][0]["object_id"] == obj.mesh_id


def test_place_identity_and_half_turn():
    obj, mesh = render_object_in_lab(Humanoid(yaw=0.2), SMALL, 8.0, math.radians(10))
    same, same_mesh = place_at_azimuth(obj, mesh, obj.azimuth)
    assert same is obj and same_mesh is mesh
    turned, _ = place_at_azimuth(obj, mesh, math.radians(-170))
    assert abs(turned.range - obj.range) < 1e-9
    assert turned.azimuth == pytest.approx(math.radians(-170), abs=1e-9)
    # orientation relative to the bearing is unchanged
    assert math.isclose(math.cos(turned.yaw - turned.azimuth), math.cos(obj.yaw - obj.azimuth), abs_tol=1e-9)


def test_off_grid_azimuth():
    obj, mesh = render_object_in_lab(Humanoid(), SMALL, 8.0, 0.0)
    with pytest.raises(OffGridAzimuthError, match="1 deg"):
        place_at_azimuth(obj, mesh, math.radians(12.5))
    place_at_azimuth(obj, mesh, math.radians(12.5), step=math.radians(0.5))


@settings(max_examples=30)
@given(st.integers(-179, 179))
def test_placement_preserves_every_range(deg):
    obj, mesh = render_object_in_lab(Humanoid(yaw=1.0), SMALL, 7.0, math.radians(20))
    placed, placed_mesh = place_at_azimuth(obj, mesh, math.radians(deg))
    before = np.linalg.norm(obj.cloud.positions, axis=1)
    after = np.linalg.norm(placed.cloud.positions, axis=1)
    assert np.max(np.abs(after - before)) < 1e-9
    assert np.allclose(placed.cloud.positions[:, 2], obj.cloud.positions[:, 2], atol=1e-12, rtol=0)
    assert np.max(np.abs(np.linalg.norm(placed_mesh.vertices, axis=1) - np.linalg.norm(mesh.vertices, axis=1))) < 1e-9
    for name in obj.cloud.attribute_names:
        assert placed.cloud[name].tobytes() == obj.cloud[name].tobytes()


def test_sequential_insertion_handles_mutual_occlusion(rng):
    ground = PointCloud(np.column_stack([rng.uniform(2, 20, 4000), rng.uniform(-3, 3, 4000), np.full(4000, -1.5)]))
    near, near_mesh = render_object_in_lab(Humanoid(), SMALL, 5.0, 0.0, mesh_id="near")
    far, far_mesh = render_object_in_lab(Humanoid(), SMALL, 9.0, 0.0, mesh_id="far")
    r = recombine_sequential(ground, [(near, near_mesh, "near"), (far, far_mesh, "far")])
    assert len(r.labels) == 2
    assert r.n_scene + r.n_object == len(r.cloud)
    assert (r.provenance == SCENE_TAG).sum() == r.n_scene
    # far points shadowed by the near mesh are gone
    far_pts = r.cloud.positions[r.object_mask("far")]
    assert len(far_pts) < len(far.cloud)
    if len(far_pts):
        assert len(compute_occlusion(PointCloud(far_pts), near_mesh)) == 0
    # the other order: the near object hides scene points and part of the far object
    r2 = recombine_sequential(ground, [(far, far_mesh, "far"), (near, near_mesh, "near")])
    assert r2.object_mask("near").sum() == len(near.cloud)
    assert r2.object_mask("far").sum() == r.object_mask("far").sum()
