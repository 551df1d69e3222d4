"""Surface-variation analysis and the ground-plane insertion map.

Surface variation of a neighborhood is lambda3 / (lambda1 + lambda2 + lambda3)
for the eigenvalues of its 1/N covariance: 0 on a plane, 1/3 for isotropic
scatter. Per-point neighborhoods use an adaptive radius: start at ``r_min``
and double (capped at ``r_max``) until ``k_min`` points are found.
"""

from __future__ import annotations

import io as _io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ObjectRecord, PointCloud, TriangleMesh
from .fusion import DEFAULT_AZIMUTH_STEP, place_at_azimuth
from .spatial import NeighborIndex

__all__ = [
    "InsertionConfig",
    "SurfaceVariationField",
    "InsertionMap",
    "PlacementVerdict",
    "surface_variation",
    "adaptive_radius_sv",
    "build_insertion_map",
    "validate_placement",
    "FOOTPRINT_INVALID",
    "RANGE_MUTATION",
    "COLLISION",
    "GROUND_MISMATCH",
]

FOOTPRINT_INVALID = "footprint-on-invalid-cell"
RANGE_MUTATION = "range-mutation"
COLLISION = "collision"
GROUND_MISMATCH = "ground-height-mismatch"


@dataclass(frozen=True)
class InsertionConfig:
    r_min: float = 0.1
    r_max: float = 1.0
    k_min: int = 10
    cell_size: float = 0.25
    sv_threshold: float = 0.10
    min_count: int = 20
    height_tolerance: float = 0.05
    ground_percentile: float = 5.0
    # placement checks
    collision_tolerance: float = 0.05
    ground_tolerance: float = 0.10
    azimuth_step_deg: float = math.degrees(DEFAULT_AZIMUTH_STEP)

    def __post_init__(self):
        if not (0 < self.r_min <= self.r_max):
            raise ValueError("need 0 < r_min <= r_max")
        if not self.azimuth_step_deg > 0:
            raise ValueError("azimuth_step_deg must be positive")
        if self.k_min < 3 or self.min_count < 1 or self.cell_size <= 0:
            raise ValueError("k_min >= 3, min_count >= 1 and cell_size > 0 required")

    @property
    def azimuth_step(self) -> float:
        return math.radians(self.azimuth_step_deg)


def _eig_sv(cov: np.ndarray) -> np.ndarray:
    """Surface variation for a stack of 3x3 covariances; NaN where total variance is 0."""
    lam = np.linalg.eigvalsh(cov)  # ascending
    lam = np.clip(lam, 0.0, None)
    total = lam.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sv = lam[..., 0] / total
    return np.where(total > 0, sv, np.nan)


def surface_variation(neighborhood) -> float | None:
    """lambda3 / (lambda1 + lambda2 + lambda3), or None when undefined.

    Undefined means fewer than 3 points or zero total variance.
    """
    pts = neighborhood.positions if isinstance(neighborhood, PointCloud) else np.asarray(neighborhood, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if len(pts) < 3:
        return None
    q = pts - pts.mean(axis=0)
    cov = q.T @ q / len(pts)
    sv = float(_eig_sv(cov))
    return None if math.isnan(sv) else sv


@dataclass(frozen=True)
class SurfaceVariationField:
    """Per-point surface variation (NaN = missing) and the radius that produced it."""

    sv: np.ndarray
    radius: np.ndarray
    neighbors: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.sv)


def _radius_schedule(r_min: float, r_max: float) -> list[float]:
    radii = [r_min]
    while radii[-1] < r_max:
        radii.append(min(radii[-1] * 2.0, r_max))
    return radii


def _grouped_covariance(pts: np.ndarray, lists) -> np.ndarray:
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    flat = np.fromiter((i for l in lists for i in l), dtype=np.int64, count=int(counts.sum()))
    seg = np.repeat(np.arange(len(lists)), counts)
    nb = pts[flat]
    mean = np.zeros((len(lists), 3))
    np.add.at(mean, seg, nb)
    mean /= counts[:, None]
    q = nb - mean[seg]
    outer = q[:, :, None] * q[:, None, :]
    cov = np.zeros((len(lists), 3, 3))
    np.add.at(cov, seg, outer)
    return cov / counts[:, None, None]


def adaptive_radius_sv(cloud: PointCloud, config: InsertionConfig | None = None,
                       index: NeighborIndex | None = None) -> SurfaceVariationField:
    config = config or InsertionConfig()
    pts = cloud.positions
    n = len(pts)
    if n == 0:
        raise ValueError("cloud is empty")
    index = index or NeighborIndex(pts)
    radius = np.full(n, np.nan)
    counts = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    for r in _radius_schedule(config.r_min, config.r_max):
        if not len(pending):
            break
        c = index.count_within(pts[pending], r)
        done = c >= config.k_min
        radius[pending[done]] = r
        counts[pending[done]] = c[done]
        pending = pending[~done]
    sv = np.full(n, np.nan)
    for r in np.unique(radius[~np.isnan(radius)]):
        members = np.flatnonzero(radius == r)
        for chunk in np.array_split(members, max(1, len(members) // 20000 + 1)):
            lists = index.radius(pts[chunk], r)
            sv[chunk] = _eig_sv(_grouped_covariance(pts, lists))
    return SurfaceVariationField(sv, radius, counts)


@dataclass(frozen=True)
class InsertionMap:
    """Ground-plane grid; cell (i, j) spans [origin + (i, j) * cell, origin + (i+1, j+1) * cell)."""

    origin: tuple
    cell_size: float
    mean_sv: np.ndarray
    ground_z: np.ndarray
    height_spread: np.ndarray
    count: np.ndarray
    valid: np.ndarray
    config: InsertionConfig = field(default_factory=InsertionConfig)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def cell_of(self, xy) -> tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        ij = np.floor((xy - np.asarray(self.origin)) / self.cell_size).astype(np.int64)
        return ij[:, 0], ij[:, 1]

    def cells_in_rect(self, lo, hi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell indices covering the XY rectangle, plus a mask of those inside the grid."""
        i0, j0 = self.cell_of(lo)
        i1, j1 = self.cell_of(hi)
        ii, jj = np.meshgrid(np.arange(i0[0], i1[0] + 1), np.arange(j0[0], j1[0] + 1), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        inside = (ii >= 0) & (jj >= 0) & (ii < self.shape[0]) & (jj < self.shape[1])
        return ii, jj, inside

    def to_csv(self) -> str:
        buf = _io.StringIO()
        buf.write("ix,iy,mean_sv,ground_z,count,valid\n")
        nx, ny = self.shape
        for i in range(nx):
            for j in range(ny):
                sv = self.mean_sv[i, j]
                gz = self.ground_z[i, j]
                buf.write(
                    f"{i},{j},{'' if math.isnan(sv) else repr(float(sv))},"
                    f"{'' if math.isnan(gz) else repr(float(gz))},{int(self.count[i, j])},{int(self.valid[i, j])}\n"
                )
        return buf.getvalue()


def build_insertion_map(scene: PointCloud, config: InsertionConfig | None = None,
                        sv_field: SurfaceVariationField | None = None) -> InsertionMap:
    """Aggregate per-point surface variation onto a ground-plane grid.

    A cell is valid iff it holds at least ``min_count`` points, its mean
    surface variation is at most ``sv_threshold`` and its height spread
    (max - min z) is at most ``height_tolerance``.
    """
    config = config or InsertionConfig()
    if len(scene) == 0:
        raise ValueError("scene is empty")
    svf = sv_field or adaptive_radius_sv(scene, config)
    pts = scene.positions
    cs = config.cell_size
    origin = np.floor(pts[:, :2].min(axis=0) / cs) * cs
    ij = np.floor((pts[:, :2] - origin) / cs).astype(np.int64)
    nx, ny = ij.max(axis=0) + 1
    flat = ij[:, 0] * ny + ij[:, 1]
    ncell = nx * ny
    count = np.bincount(flat, minlength=ncell)
    sv_ok = ~np.isnan(svf.sv)
    sv_sum = np.bincount(flat[sv_ok], weights=svf.sv[sv_ok], minlength=ncell)
    sv_n = np.bincount(flat[sv_ok], minlength=ncell)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_sv = np.where(sv_n > 0, sv_sum / np.maximum(sv_n, 1), np.nan)
    zmax = np.full(ncell, -np.inf)
    zmin = np.full(ncell, np.inf)
    np.maximum.at(zmax, flat, pts[:, 2])
    np.minimum.at(zmin, flat, pts[:, 2])
    spread = np.where(count > 0, zmax - zmin, np.nan)
    ground = np.full(ncell, np.nan)
    order = np.lexsort((pts[:, 2], flat))
    sorted_cells = flat[order]
    starts = np.searchsorted(sorted_cells, np.arange(ncell))
    for c in np.flatnonzero(count):
        z = pts[order[starts[c] : starts[c] + count[c]], 2]
        ground[c] = np.percentile(z, config.ground_percentile)
    with np.errstate(invalid="ignore"):
        valid = (count >= config.min_count) & (mean_sv <= config.sv_threshold) & (spread <= config.height_tolerance)
    shape = (int(nx), int(ny))
    return InsertionMap(
        origin=(float(origin[0]), float(origin[1])),
        cell_size=cs,
        mean_sv=mean_sv.reshape(shape),
        ground_z=ground.reshape(shape),
        height_spread=spread.reshape(shape),
        count=count.reshape(shape),
        valid=valid.reshape(shape),
        config=config,
    )


@dataclass(frozen=True)
class PlacementVerdict:
    violations: tuple = ()
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_placement(
    obj: ObjectRecord,
    mesh: TriangleMesh,
    imap: InsertionMap,
    scene: PointCloud,
    azimuth: float | None = None,
    target_range: float | None = None,
) -> PlacementVerdict:
    """Check an orbital placement against the map and the scene.

    ``mesh`` is the object's registered mesh in the sensor frame at its
    measured pose; both are orbited to ``azimuth`` (None keeps the measured
    bearing). ``target_range`` is a requested sensor distance; anything but
    the measured range is a range mutation, since objects only move along
    their orbit.
    """
    cfg = imap.config
    violations: list[str] = []
    details: dict = {}
    if target_range is not None and abs(target_range - obj.range) > 1e-9:
        violations.append(RANGE_MUTATION)
        details[RANGE_MUTATION] = {"measured": obj.range, "requested": float(target_range)}
    placed, placed_mesh = (obj, mesh) if azimuth is None else place_at_azimuth(obj, mesh, azimuth, cfg.azimuth_step)
    box = placed_mesh.bounds()

    ii, jj, inside = imap.cells_in_rect(box.min[:2], box.max[:2])
    bad = ~inside
    bad[inside] |= ~imap.valid[ii[inside], jj[inside]]
    if bad.any():
        violations.append(FOOTPRINT_INVALID)
        details[FOOTPRINT_INVALID] = {"cells": int(len(ii)), "invalid": int(bad.sum())}

    inner = box.expanded(-cfg.collision_tolerance) if np.all(box.extent > 2 * cfg.collision_tolerance) else None
    if inner is not None:
        hits = int(inner.contains(scene.positions).sum())
        if hits:
            violations.append(COLLISION)
            details[COLLISION] = {"points": hits}

    if inside.any():
        g = imap.ground_z[ii[inside], jj[inside]]
        g = g[~np.isnan(g)]
        if len(g):
            ground = float(np.median(g))
            base = float(box.min[2])
            if abs(base - ground) > cfg.ground_tolerance:
                violations.append(GROUND_MISMATCH)
                details[GROUND_MISMATCH] = {"object_base": base, "ground": ground}
    return PlacementVerdict(tuple(violations), details)
