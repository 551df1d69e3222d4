"""Mesh-based occlusion of scene points and index-based point removal."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import PointCloud, TriangleMesh
from .spatial import RaycastIndex

logger = logging.getLogger(__name__)

__all__ = ["OcclusionResult", "OCCLUSION_EPS", "compute_occlusion", "remove_points", "remove_matching_points"]

OCCLUSION_EPS = 1e-4


@dataclass(frozen=True)
class OcclusionResult:
    """Scene indices shadowed by the mesh, sorted ascending, and their positions.

    ``skipped_indices`` lists points at the sensor origin, which cannot be
    tested (zero-length ray).
    """

    occluded_indices: np.ndarray
    occluded_points: PointCloud
    t_hit: np.ndarray = field(repr=False, default=None)
    skipped_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.occluded_indices)


def compute_occlusion(
    scene: PointCloud,
    mesh: TriangleMesh | RaycastIndex,
    eps: float = OCCLUSION_EPS,
    literal: bool = False,
) -> OcclusionResult:
    """Find scene points hidden from the sensor by ``mesh``.

    One ray per point, origin at the sensor, direction equal to the point's
    coordinates (so t = 1 at the point). A point is occluded when the nearest
    hit satisfies ``t < 1 - eps``: the mesh lies strictly between sensor and
    point. Points on the surface (|t - 1| <= eps) and in front of it are kept.

    ``literal=True`` instead marks every point whose ray hits the mesh at any
    distance, including points in front of the mesh.
    """
    if len(scene) == 0:
        raise ValueError("scene is empty")
    index = mesh if isinstance(mesh, RaycastIndex) else RaycastIndex(mesh)
    pts = scene.positions
    at_origin = ~np.any(pts != 0, axis=1)
    skipped = np.flatnonzero(at_origin)
    if len(skipped):
        logger.warning("skipped %d scene points at the sensor origin", len(skipped))
    t_hit = index.cast(np.zeros(3), pts).t_hit
    occluded = np.isfinite(t_hit) if literal else t_hit < 1.0 - eps
    occluded &= ~at_origin
    idx = np.flatnonzero(occluded).astype(np.int64)
    return OcclusionResult(idx, PointCloud(pts[idx]), t_hit, skipped.astype(np.int64))


def remove_points(cloud: PointCloud, indices) -> PointCloud:
    """Drop the listed indices, keeping order and every attribute of the rest."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if len(indices) and (indices.min() < 0 or indices.max() >= len(cloud)):
        raise IndexError(f"point index out of range for cloud of {len(cloud)} points")
    keep = np.ones(len(cloud), dtype=bool)
    keep[indices] = False
    return cloud.select(keep)


def remove_matching_points(cloud: PointCloud, points) -> PointCloud:
    """Drop points whose coordinates equal any row of ``points`` bit for bit.

    For occlusion sets that arrive without indices; prefer :func:`remove_points`.
    """
    pts = np.asarray(points.positions if isinstance(points, PointCloud) else points, dtype=np.float64)
    pts = np.ascontiguousarray(pts.reshape(-1, 3))
    if len(pts) == 0:
        return cloud
    row = np.dtype((np.void, 24))
    # normalise -0.0 to 0.0 so bitwise keys agree with numeric equality
    a = np.ascontiguousarray(cloud.positions + 0.0).view(row).ravel()
    b = (pts + 0.0).view(row).ravel()
    return cloud.select(~np.isin(a, b))
