"""Point cloud dissimilarity metrics and the pruned-ROI evaluation protocol.

Conventions: ``P`` is the candidate (e.g. a recombined scene), ``Q`` the
reference scan. Chamfer is the sum of both directional mean *squared*
nearest-neighbor distances (m^2); Hausdorff and RMSE are in meters; RMSE is
directional, P into Q. Precision/recall use a strict ``d < tau`` test.

The default ``tau`` (0.05 m) is a choice, not a measured constant: F1 values
are only comparable between reports that share the same ``tau``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import Aabb, PointCloud, TriangleMesh
from .spatial import NeighborIndex

__all__ = [
    "MetricsReport",
    "DEFAULT_TAU",
    "directional_distances",
    "chamfer",
    "hausdorff",
    "rmse",
    "f1",
    "compare",
    "prune_to_roi",
    "occlusion_roi",
    "noise_reference",
    "format_table_row",
    "reports_to_csv",
    "reports_to_json",
]

DEFAULT_TAU = 0.05


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.positions
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def _require(p: np.ndarray, q: np.ndarray) -> None:
    if len(p) == 0 or len(q) == 0:
        raise ValueError("metrics require non-empty point sets")


def directional_distances(p, q, q_index: NeighborIndex | None = None) -> np.ndarray:
    """Distance from every point of ``p`` to its nearest neighbor in ``q``."""
    p, q = _points(p), _points(q)
    _require(p, q)
    index = q_index if q_index is not None else NeighborIndex(q)
    return index.nearest(p)[1]


def _both(p, q):
    p, q = _points(p), _points(q)
    _require(p, q)
    return directional_distances(p, q), directional_distances(q, p)


def chamfer(p, q) -> float:
    d_pq, d_qp = _both(p, q)
    return float(np.mean(d_pq**2) + np.mean(d_qp**2))


def hausdorff(p, q) -> float:
    d_pq, d_qp = _both(p, q)
    return float(max(d_pq.max(), d_qp.max()))


def rmse(p, q) -> float:
    d_pq = directional_distances(p, q)
    return float(math.sqrt(np.mean(d_pq**2)))


def _prf(d_pq, d_qp, tau):
    precision = float(np.mean(d_pq < tau))
    recall = float(np.mean(d_qp < tau))
    denom = precision + recall
    return precision, recall, (2.0 * precision * recall / denom if denom > 0 else 0.0)


def f1(p, q, tau: float = DEFAULT_TAU) -> tuple[float, float, float]:
    """Return (precision, recall, f1) at threshold ``tau`` (meters)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    d_pq, d_qp = _both(p, q)
    return _prf(d_pq, d_qp, tau)


@dataclass(frozen=True)
class MetricsReport:
    chamfer: float
    sqrt_chamfer: float
    hausdorff: float
    rmse: float
    precision: float
    recall: float
    f1: float
    f1_percent: float
    tau: float
    n_p: int
    n_q: int

    def as_dict(self) -> dict:
        return asdict(self)


def compare(p, q, tau: float = DEFAULT_TAU) -> MetricsReport:
    """Full report for candidate ``p`` against reference ``q`` (two k-d tree builds)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    d_pq, d_qp = _both(p, q)
    cd = float(np.mean(d_pq**2) + np.mean(d_qp**2))
    precision, recall, f = _prf(d_pq, d_qp, tau)
    return MetricsReport(
        chamfer=cd,
        sqrt_chamfer=math.sqrt(cd),
        hausdorff=float(max(d_pq.max(), d_qp.max())),
        rmse=float(math.sqrt(np.mean(d_pq**2))),
        precision=precision,
        recall=recall,
        f1=f,
        f1_percent=100.0 * f,
        tau=float(tau),
        n_p=len(d_pq),
        n_q=len(d_qp),
    )


def prune_to_roi(reference: PointCloud, candidate: PointCloud, roi: Aabb) -> tuple[PointCloud, PointCloud]:
    """Keep points inside ``roi`` (bounds inclusive) in both clouds."""
    return reference.select(roi.contains(reference.positions)), candidate.select(roi.contains(candidate.positions))


def occlusion_roi(geometry, margin: float = 0.5, depth: float = 5.0) -> Aabb:
    """Box around an object and the volume it shadows from a sensor at the origin.

    ``geometry`` is a mesh, cloud or (N, 3) array; its points are also pushed
    ``depth`` meters radially outward to cover the shadow, then the union is
    padded by ``margin``.
    """
    if isinstance(geometry, TriangleMesh):
        pts = geometry.vertices
    else:
        pts = _points(geometry)
    if len(pts) == 0:
        raise ValueError("empty point set")
    norms = np.linalg.norm(pts, axis=1, keepdims=True)
    pushed = pts + depth * pts / np.where(norms > 0, norms, 1.0)
    allp = np.vstack([pts, pushed])
    return Aabb(allp.min(axis=0) - margin, allp.max(axis=0) + margin)


def noise_reference(scan_a: PointCloud, scan_b: PointCloud, tau: float = DEFAULT_TAU) -> MetricsReport:
    """Baseline report between two scans of an unchanged scene."""
    return compare(scan_a, scan_b, tau)


def format_table_row(label: str, report: MetricsReport) -> str:
    """One row in the layout ``label | Chamfer | Hausdorff | RMSE | F1 %``."""
    return (
        f"{label} | Chamfer {report.chamfer:.4f} | Hausdorff {report.hausdorff:.5f} | "
        f"RMSE {report.rmse:.4f} | F1 {report.f1_percent:.4f}"
    )


_FIELDS = [f for f in MetricsReport.__dataclass_fields__]


def reports_to_csv(rows: list[tuple[dict, MetricsReport]]) -> str:
    """CSV text: context columns (scene, object, placement...) then report fields."""
    context_keys: list[str] = []
    for ctx, _ in rows:
        for k in ctx:
            if k not in context_keys:
                context_keys.append(k)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(context_keys + _FIELDS)
    for ctx, rep in rows:
        d = rep.as_dict()
        writer.writerow([ctx.get(k, "") for k in context_keys] + [repr(d[f]) if isinstance(d[f], float) else d[f] for f in _FIELDS])
    return buf.getvalue()


def reports_to_json(rows: list[tuple[dict, MetricsReport]]) -> str:
    return json.dumps([{**ctx, **rep.as_dict()} for ctx, rep in rows], indent=2, sort_keys=True) + "\n"
