import math

import numpy as np
import pytest

from conftest import unit_square
from pcrecomb.core import PointCloud, SimilarityTransform, TriangleMesh, rot_z
from pcrecomb.errors import RegistrationDivergedError
from pcrecomb.metrics import chamfer
from pcrecomb.registration import (
    IcpTrace,
    RegistrationConfig,
    icp,
    kabsch,
    register_mesh_to_cloud,
    sample_mesh_surface,
    scale_mesh_to_cloud_height,
)
from pcrecomb.synthgen import Humanoid, LShape

FAST = RegistrationConfig(sample_count=3000)


def pose(deg, shift=(0.0, 0.0, 0.0), scale=1.0, mesh=None):
    pivot = mesh.vertex_centroid() if mesh is not None else np.zeros(3)
    t = SimilarityTransform.about_pivot(rot_z(math.radians(deg)), pivot, scale)
    return SimilarityTransform(np.eye(3), np.asarray(shift, dtype=float)).compose(t)


def test_config_validation():
    with pytest.raises(ValueError):
        RegistrationConfig(divisor=0)
    with pytest.raises(ValueError):
        RegistrationConfig(stage_thresholds=(0.05, 0.10))
    with pytest.raises(ValueError):
        RegistrationConfig(stage_thresholds=())
    assert RegistrationConfig().stage_thresholds == (0.10, 0.05)


def test_sampling_statistics():
    sq = TriangleMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    s = sample_mesh_surface(sq, 100_000, 3)
    assert np.all(np.abs(s.positions.mean(axis=0) - [0.5, 0.5, 0]) < 0.01)
    assert s.positions.min() >= 0 and s.positions.max() <= 1
    assert len(sample_mesh_surface(Humanoid().local_mesh(), 30_000)) == 30_000


def test_sampling_is_area_weighted():
    small = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    big = TriangleMesh([[5, 0, 0], [8, 0, 0], [5, 1, 0]], [[0, 1, 2]])
    s = sample_mesh_surface(TriangleMesh.merge([small, big]), 40_000, 1)
    assert abs(np.mean(s.positions[:, 0] >= 5) - 0.75) < 0.01


def test_single_sample_inside_triangle():
    v = np.array([[0.0, 0, 0], [2, 0, 0], [0, 3, 0]])
    p = sample_mesh_surface(TriangleMesh(v, [[0, 1, 2]]), 1, 7).positions[0]
    # barycentric coordinates via the 2D system
    a, b = np.linalg.solve(np.column_stack([v[1, :2] - v[0, :2], v[2, :2] - v[0, :2]]), p[:2] - v[0, :2])
    assert a >= 0 and b >= 0 and a + b <= 1 and p[2] == 0


def test_sampling_deterministic_and_equivariant():
    m = Humanoid().local_mesh()
    a = sample_mesh_surface(m, 500, 11)
    assert a.equals(sample_mesh_surface(m, 500, 11))
    assert not a.equals(sample_mesh_surface(m, 500, 12))
    t = pose(37, (1, 2, 3), 1.2)
    b = sample_mesh_surface(m.transformed(t), 500, 11)
    assert np.max(np.abs(b.positions - t.apply(a.positions))) < 1e-9


def test_sampling_errors():
    with pytest.raises(ValueError):
        sample_mesh_surface(unit_square(), 0)


def test_scale_examples():
    m = Humanoid().local_mesh()
    h = np.ptp(m.vertices[:, 2])
    cloud = PointCloud([[0, 0, 0], [0, 0, 0.9 * h]])
    scaled, s = scale_mesh_to_cloud_height(m, cloud)
    assert s == pytest.approx(0.9, rel=1e-12)
    assert np.ptp(scaled.vertices[:, 2]) == pytest.approx(0.9 * h, rel=1e-9)
    assert np.allclose(scaled.vertex_centroid(), m.vertex_centroid(), atol=1e-12)
    same, s1 = scale_mesh_to_cloud_height(m, PointCloud([[0, 0, 0], [0, 0, h]]))
    assert s1 == 1.0 and same is m
    back, _ = scale_mesh_to_cloud_height(scaled, PointCloud([[0, 0, 0], [0, 0, h]]))
    assert np.max(np.abs(back.vertices - m.vertices)) < 1e-9
    with pytest.raises(ValueError):
        scale_mesh_to_cloud_height(m, PointCloud([[0, 0, 1], [1, 0, 1]]))


def test_kabsch_recovers_rigid_motion(rng):
    p = rng.normal(size=(50, 3))
    r_true = pose(73).rotation
    q = p @ r_true.T + [1, -2, 0.5]
    r, t = kabsch(p, q)
    assert np.allclose(r, r_true, atol=1e-12) and np.allclose(t, [1, -2, 0.5], atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_icp_fixed_point(rng):
    p = PointCloud(rng.normal(size=(500, 3)))
    t = icp(p, p, SimilarityTransform.identity())
    assert np.allclose(t.matrix(), np.eye(4), atol=1e-9)


@pytest.mark.parametrize("noise,limit", [(0.0, 1e-6), (0.01, 0.02)])
def test_icp_recovers_small_motion(noise, limit):
    m = Humanoid().local_mesh()
    src = sample_mesh_surface(m, 4000, 0)
    truth = pose(15, (0.2, -0.1, 0.05), mesh=m)
    tgt = truth.apply(src.positions)
    tgt = tgt + np.random.default_rng(2).normal(0, noise, tgt.shape)
    init = SimilarityTransform(np.eye(3), tgt.mean(axis=0) - src.positions.mean(axis=0))
    trace = IcpTrace()
    t = icp(src, PointCloud(tgt), init, max_iterations=200, trace=trace)
    err = math.sqrt(np.mean(np.sum((t.apply(src.positions) - tgt) ** 2, axis=1)))
    assert err < limit
    for s in set(trace.stage):
        seq = [r for st, r in zip(trace.stage, trace.truncated_rmse) if st == s]
        assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(seq, seq[1:]))


def test_icp_diverges_when_nothing_is_close(rng):
    p = rng.normal(size=(100, 3))
    with pytest.raises(RegistrationDivergedError, match="diverged|correspondences"):
        icp(p, p + 100.0, SimilarityTransform.identity())
    with pytest.raises(ValueError):
        icp(p[:2], p, SimilarityTransform.identity())


def test_self_registration():
    m = Humanoid().local_mesh()
    cloud = sample_mesh_surface(m, FAST.sample_count, FAST.seed)
    r = register_mesh_to_cloud(m, cloud, FAST)
    assert r.chamfer < 1e-6 and r.best_rotation_deg == 0.0
    assert len(r.attempts) == FAST.divisor
    assert [a.rotation_deg for a in r.attempts] == [45.0 * k for k in range(8)]
    # every attempt evaluated, the winner is the minimum
    assert all(math.isfinite(a.chamfer) for a in r.attempts)
    assert r.chamfer == min(a.chamfer for a in r.attempts)


def test_rotated_recovery_and_reported_chamfer():
    m = Humanoid().local_mesh()
    truth = pose(90, (1.2, -0.7, 0.3), 1.05, mesh=m)
    cloud = sample_mesh_surface(m.transformed(truth), FAST.sample_count, FAST.seed)
    r = register_mesh_to_cloud(m, cloud, FAST)
    assert r.chamfer < 1e-6
    assert r.scale == pytest.approx(1.05, rel=1e-9)
    assert np.max(np.abs(r.aligned_mesh.vertices - m.transformed(truth).vertices)) < 1e-3
    resampled = sample_mesh_surface(r.aligned_mesh, FAST.sample_count, FAST.seed)
    assert abs(chamfer(resampled.positions, cloud) - r.chamfer) < 1e-9


def test_registration_deterministic():
    m = Humanoid().local_mesh()
    cloud = sample_mesh_surface(m.transformed(pose(200, (0, 1, 0), mesh=m)), 2000, 5)
    cfg = RegistrationConfig(sample_count=2000, divisor=4)
    a, b = register_mesh_to_cloud(m, cloud, cfg), register_mesh_to_cloud(m, cloud, cfg)
    assert a.chamfer == b.chamfer and np.array_equal(a.transform.matrix(), b.transform.matrix())
    assert a.aligned_mesh.vertices.tobytes() == b.aligned_mesh.vertices.tobytes()


def test_mirror_is_not_reachable():
    m = LShape().local_mesh()
    own = sample_mesh_surface(m, FAST.sample_count, 1)
    mirror = PointCloud(own.positions * [1.0, -1.0, 1.0])
    self_fit = register_mesh_to_cloud(m, own, FAST).chamfer
    mirror_fit = register_mesh_to_cloud(m, mirror, FAST).chamfer
    assert mirror_fit > self_fit
    assert mirror_fit > 10 * self_fit


def test_all_diverged_carries_diagnostics():
    m = Humanoid().local_mesh()
    # two far apart clumps: the centroid lands in empty space, no correspondences
    z = np.linspace(0, 1.8, 20)
    clump = np.column_stack([np.zeros(20), np.zeros(20), z])
    cloud = PointCloud(np.vstack([clump + [-50, 0, 0], clump + [50, 0, 0]]))
    with pytest.raises(RegistrationDivergedError) as info:
        register_mesh_to_cloud(m, cloud, RegistrationConfig(sample_count=500, divisor=4))
    assert len(info.value.diagnostics) == 4


def test_symmetric_object_flags_risk():
    # a cylinder looks the same from every start
    from pcrecomb.synthgen import Cylinder

    m = Cylinder((0, 0, 0), 0.3, 1.5).mesh()
    cloud = sample_mesh_surface(m.transformed(pose(30, mesh=m)), 3000, 4)
    r = register_mesh_to_cloud(m, cloud, RegistrationConfig(sample_count=3000, divisor=4))
    assert r.chamfer < 1e-3 and r.symmetry_risk
    m = Humanoid().local_mesh()
    cloud = sample_mesh_surface(m, 3000, 0)
    assert not register_mesh_to_cloud(m, cloud, FAST).symmetry_risk
