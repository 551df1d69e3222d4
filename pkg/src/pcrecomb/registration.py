"""Mesh-to-point-cloud registration by multi-start ICP.

The mesh is scaled once to the cloud's height, then for each of ``divisor``
rotations about Z (through the mesh centroid) it is sampled, initialised by
centroid alignment, refined by staged point-to-point ICP and scored with the
Chamfer distance. The lowest-Chamfer attempt wins; ties go to the smaller angle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import PointCloud, SimilarityTransform, TriangleMesh, centroid, rot_z
from .errors import RegistrationDivergedError
from .metrics import chamfer as chamfer_distance
from .spatial import NeighborIndex

logger = logging.getLogger(__name__)

__all__ = [
    "RegistrationConfig",
    "RegistrationAttempt",
    "RegistrationResult",
    "IcpTrace",
    "sample_mesh_surface",
    "scale_mesh_to_cloud_height",
    "kabsch",
    "icp",
    "register_mesh_to_cloud",
]


@dataclass(frozen=True)
class RegistrationConfig:
    divisor: int = 8
    sample_count: int = 30_000
    stage_thresholds: tuple[float, ...] = (0.10, 0.05)
    max_iterations_per_stage: int = 50
    convergence_eps: float = 1e-6
    seed: int = 0
    # best and runner-up closer than this relative gap raise the symmetry flag
    symmetry_ratio: float = 0.10

    def __post_init__(self):
        thr = tuple(float(t) for t in self.stage_thresholds)
        object.__setattr__(self, "stage_thresholds", thr)
        if self.divisor < 1 or self.sample_count < 1 or self.max_iterations_per_stage < 1:
            raise ValueError("divisor, sample_count and max_iterations_per_stage must be positive")
        if not thr or any(t <= 0 for t in thr):
            raise ValueError("stage thresholds must be positive")
        if any(b >= a for a, b in zip(thr, thr[1:])):
            raise ValueError("stage thresholds must be strictly decreasing")
        if not self.convergence_eps > 0:
            raise ValueError("convergence_eps must be positive")


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int | np.random.Generator = 0) -> PointCloud:
    """Draw ``n`` points uniformly by area from the mesh surface.

    The draw depends only on the seed and relative triangle areas, so sampling
    a similarity-transformed mesh with the same seed yields the transformed samples.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(mesh) == 0:
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("zero-area mesh")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cdf = np.cumsum(areas) / total
    tri = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = mesh.corners()
    w0 = (1.0 - r1)[:, None]
    w1 = (r1 * (1.0 - r2))[:, None]
    w2 = (r1 * r2)[:, None]
    return PointCloud(w0 * a[tri] + w1 * b[tri] + w2 * c[tri])


def _z_extent(points: np.ndarray) -> float:
    return float(points[:, 2].max() - points[:, 2].min())


def scale_mesh_to_cloud_height(mesh: TriangleMesh, cloud: PointCloud) -> tuple[TriangleMesh, float]:
    """Uniformly scale ``mesh`` about its vertex centroid to the cloud's Z-extent."""
    if len(mesh.vertices) == 0 or len(cloud) == 0:
        raise ValueError("empty mesh or cloud")
    h_mesh = _z_extent(mesh.vertices)
    h_cloud = _z_extent(cloud.positions)
    if h_mesh <= 0 or h_cloud <= 0:
        raise ValueError("zero Z-extent")
    s = h_cloud / h_mesh
    if s == 1.0:
        return mesh, 1.0
    t = SimilarityTransform.about_pivot(np.eye(3), mesh.vertex_centroid(), s)
    return mesh.transformed(t), s


def kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid (R, t) with R @ src_i + t ≈ dst_i."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cd - r @ cs


@dataclass
class IcpTrace:
    """Per-iteration record of one ICP run.

    ``truncated_rmse`` is sqrt(mean(min(d^2, threshold^2))) over all source
    points; it never increases within a stage. ``inlier_rmse`` is over accepted
    correspondences only.
    """

    stage: list[int] = field(default_factory=list)
    truncated_rmse: list[float] = field(default_factory=list)
    inlier_rmse: list[float] = field(default_factory=list)
    inliers: list[int] = field(default_factory=list)


def icp(
    source: PointCloud,
    target: PointCloud,
    init: SimilarityTransform,
    thresholds=(0.10, 0.05),
    max_iterations: int = 50,
    convergence_eps: float = 1e-6,
    target_index: NeighborIndex | None = None,
    trace: IcpTrace | None = None,
) -> SimilarityTransform:
    """Staged rigid point-to-point ICP.

    Each stage starts from the previous result and rejects correspondences
    farther than its threshold. The scale of ``init`` is kept; only the rigid
    part is refined. Raises :class:`RegistrationDivergedError` when no stage
    finds three valid correspondences.
    """
    src = source.positions if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64)
    tgt = target.positions if isinstance(target, PointCloud) else np.asarray(target, dtype=np.float64)
    if len(src) < 3 or len(tgt) < 3:
        raise ValueError("ICP needs at least 3 points in source and target")
    index = target_index if target_index is not None else NeighborIndex(tgt)
    # spatially coherent query order; the result does not depend on it beyond rounding
    src = src[NeighborIndex(src).leaf_order()]
    current = init
    any_stage = False
    for stage, thr in enumerate(thresholds):
        thr2 = thr * thr
        prev = None
        moved = current.apply(src)
        for _ in range(max_iterations):
            # slightly widened bound so d == thr is still found
            j, d = index.nearest(moved, upper_bound=thr * (1 + 1e-9))
            inl = d <= thr
            trunc = math.sqrt(np.mean(np.minimum(d * d, thr2)))
            if trace is not None:
                trace.stage.append(stage)
                trace.truncated_rmse.append(trunc)
                trace.inlier_rmse.append(float(np.sqrt(np.mean(d[inl] ** 2))) if inl.any() else math.inf)
                trace.inliers.append(int(inl.sum()))
            if prev is not None:
                # monotone by construction; slack covers rounding only
                assert trunc <= prev * (1 + 1e-9) + 1e-12, "ICP truncated RMSE increased"
                if prev == 0 or (prev - trunc) <= convergence_eps * prev:
                    break
            if inl.sum() < 3:
                break
            any_stage = True
            r, t = kabsch(moved[inl], tgt[j[inl]])
            current = SimilarityTransform(r, t).compose(current)
            moved = current.apply(src)
            prev = trunc
    if not any_stage:
        raise RegistrationDivergedError("no correspondences within any stage threshold")
    return current


@dataclass(frozen=True)
class RegistrationAttempt:
    rotation_deg: float
    chamfer: float
    transform: SimilarityTransform | None
    error: str | None = None


@dataclass(frozen=True)
class RegistrationResult:
    aligned_mesh: TriangleMesh
    transform: SimilarityTransform
    best_rotation_deg: float
    chamfer: float
    scale: float
    attempts: tuple[RegistrationAttempt, ...] = ()
    symmetry_risk: bool = False


DISTINCT_POSE_DEG = 10.0


def _yaw_gap(a: SimilarityTransform, b: SimilarityTransform) -> float:
    r = a.rotation @ b.rotation.T
    return abs(math.atan2(r[1, 0], r[0, 0]))


def register_mesh_to_cloud(
    mesh: TriangleMesh, object_cloud: PointCloud, config: RegistrationConfig | None = None
) -> RegistrationResult:
    """Align ``mesh`` (any local frame) onto ``object_cloud`` (sensor frame)."""
    config = config or RegistrationConfig()
    if len(object_cloud) < 3:
        raise ValueError("object cloud needs at least 3 points")
    scaled, s = scale_mesh_to_cloud_height(mesh, object_cloud)
    pivot = scaled.vertex_centroid()
    scaling = SimilarityTransform.about_pivot(np.eye(3), mesh.vertex_centroid(), s)
    target_index = NeighborIndex(object_cloud.positions)
    target_centroid = centroid(object_cloud)

    attempts: list[RegistrationAttempt] = []
    for k in range(config.divisor):
        deg = 360.0 * k / config.divisor
        rotate = SimilarityTransform.about_pivot(rot_z(math.radians(deg)), pivot)
        base = rotate.compose(scaling)
        samples = sample_mesh_surface(mesh.transformed(base), config.sample_count, config.seed)
        init = SimilarityTransform(np.eye(3), target_centroid - centroid(samples))
        try:
            t = icp(
                samples,
                object_cloud,
                init,
                config.stage_thresholds,
                config.max_iterations_per_stage,
                config.convergence_eps,
                target_index=target_index,
            )
        except RegistrationDivergedError as exc:
            attempts.append(RegistrationAttempt(deg, math.inf, None, str(exc)))
            continue
        d = chamfer_distance(t.apply(samples.positions), object_cloud)
        attempts.append(RegistrationAttempt(deg, d, t.compose(base)))
        logger.debug("rotation %.1f deg: chamfer %.6g", deg, d)

    ok = [a for a in attempts if a.transform is not None]
    if not ok:
        raise RegistrationDivergedError("all rotations diverged", diagnostics=attempts)
    ranked = sorted(ok, key=lambda a: (a.chamfer, a.rotation_deg))
    best = ranked[0]
    # runner-up among attempts that ended in a different pose; starts that
    # fell into the best basin are the same answer, not a rival
    rivals = [a for a in ranked[1:] if _yaw_gap(a.transform, best.transform) > math.radians(DISTINCT_POSE_DEG)]
    risk = False
    if rivals:
        second = rivals[0].chamfer
        risk = (second - best.chamfer) < config.symmetry_ratio * second
    return RegistrationResult(
        aligned_mesh=mesh.transformed(best.transform),
        transform=best.transform,
        best_rotation_deg=best.rotation_deg,
        chamfer=best.chamfer,
        scale=s,
        attempts=tuple(attempts),
        symmetry_risk=risk,
    )
