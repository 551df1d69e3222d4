"""Recombined scenes, labels, and orbital re-placement of objects.

The recombined cloud is the occlusion-filtered scene followed by the object
points, so provenance can be reconstructed from counts alone. When the two
attribute schemas differ, missing columns are filled with 0 and listed in
``RecombinedScene.filled_attributes``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import ObjectRecord, PointCloud, SceneRecord, SimilarityTransform, TriangleMesh, rot_z, wrap_angle
from .errors import AttributeConflictError, OffGridAzimuthError
from .occlusion import OCCLUSION_EPS, OcclusionResult, compute_occlusion, remove_points

logger = logging.getLogger(__name__)

__all__ = [
    "OrientedBox",
    "RecombinedScene",
    "SCENE_TAG",
    "MISSING_ATTRIBUTE_FILL",
    "DEFAULT_AZIMUTH_STEP",
    "recombine",
    "recombine_sequential",
    "make_label",
    "place_at_azimuth",
    "labels_to_json",
]

SCENE_TAG = "scene"
MISSING_ATTRIBUTE_FILL = 0
DEFAULT_AZIMUTH_STEP = math.radians(1.0)


@dataclass(frozen=True)
class OrientedBox:
    center: tuple
    half_extents: tuple
    yaw: float
    object_type: str
    object_id: str

    def __post_init__(self):
        if any(h <= 0 for h in self.half_extents):
            raise ValueError("half extents must be positive")

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(self.center)
        local = p @ rot_z(self.yaw)  # rows times R == R^T applied to each point
        return np.all(np.abs(local) <= np.asarray(self.half_extents) + tol, axis=1)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["center"] = [float(v) for v in self.center]
        d["half_extents"] = [float(v) for v in self.half_extents]
        return d


@dataclass(frozen=True)
class RecombinedScene:
    cloud: PointCloud
    labels: tuple
    provenance: np.ndarray
    n_scene: int
    n_object: int
    filled_attributes: tuple = ()

    def object_mask(self, object_id: str | None = None) -> np.ndarray:
        if object_id is None:
            return self.provenance != SCENE_TAG
        return self.provenance == object_id


def _unify(scene: PointCloud, obj: PointCloud) -> tuple[dict, dict, list[str]]:
    s_schema, o_schema = scene.schema(), obj.schema()
    for name in set(s_schema) & set(o_schema):
        if s_schema[name] != o_schema[name]:
            raise AttributeConflictError(
                f"attribute {name!r} is {s_schema[name]} in the scene but {o_schema[name]} in the object"
            )
    names = list(s_schema) + [n for n in o_schema if n not in s_schema]
    filled = []
    s_attrs, o_attrs = scene.attributes, obj.attributes
    for name in names:
        dt = s_schema.get(name, o_schema.get(name))
        if name not in s_attrs:
            s_attrs[name] = np.full(len(scene), MISSING_ATTRIBUTE_FILL, dtype=dt)
            filled.append(f"scene:{name}")
        if name not in o_attrs:
            o_attrs[name] = np.full(len(obj), MISSING_ATTRIBUTE_FILL, dtype=dt)
            filled.append(f"object:{name}")
    return {n: s_attrs[n] for n in names}, {n: o_attrs[n] for n in names}, filled


def recombine(
    scene: SceneRecord | PointCloud,
    obj: ObjectRecord,
    occlusion: OcclusionResult,
    aligned_mesh: TriangleMesh | None = None,
    object_id: str | None = None,
) -> RecombinedScene:
    """Remove occluded scene points, then append the object points.

    A label is emitted from ``aligned_mesh`` when given, otherwise from the
    object cloud; with neither available the label list is empty.
    """
    scene_cloud = scene.cloud if isinstance(scene, SceneRecord) else scene
    object_id = object_id or obj.mesh_id
    filtered = remove_points(scene_cloud, occlusion.occluded_indices)
    s_attrs, o_attrs, filled = _unify(filtered, obj.cloud)
    if filled:
        logger.warning("filled missing attributes with %s: %s", MISSING_ATTRIBUTE_FILL, ", ".join(filled))
    positions = np.vstack([filtered.positions, obj.cloud.positions])
    attrs = {n: np.concatenate([s_attrs[n], o_attrs[n]]) for n in s_attrs}
    cloud = PointCloud(positions, attrs)
    provenance = np.array([SCENE_TAG] * len(filtered) + [object_id] * len(obj.cloud), dtype=object)
    labels = []
    if aligned_mesh is not None or len(obj.cloud):
        labels.append(make_label(obj, aligned_mesh, object_id))
    return RecombinedScene(cloud, tuple(labels), provenance, len(filtered), len(obj.cloud), tuple(filled))


def recombine_sequential(
    scene: SceneRecord | PointCloud,
    items,
    eps: float = OCCLUSION_EPS,
) -> RecombinedScene:
    """Insert several objects one after another.

    ``items`` holds (ObjectRecord, mesh, object_id) triples with meshes in the
    sensor frame. Each insertion removes whatever its mesh shadows in the
    current cloud, earlier objects included, and its own points are dropped
    where an earlier object's mesh shadows them.
    """
    cloud = scene.cloud if isinstance(scene, SceneRecord) else scene
    provenance = np.array([SCENE_TAG] * len(cloud), dtype=object)
    n_scene = len(cloud)
    labels, filled, prior = [], [], []
    n_object = 0
    for obj, mesh, object_id in items:
        object_id = object_id or obj.mesh_id
        if len(cloud):
            occ = compute_occlusion(cloud, mesh, eps)
        else:
            occ = OcclusionResult(np.zeros(0, dtype=np.int64), PointCloud(np.zeros((0, 3))))
        own = obj
        if prior and len(obj.cloud):
            hidden = compute_occlusion(obj.cloud, TriangleMesh.merge(prior), eps).occluded_indices
            if len(hidden):
                kept = remove_points(obj.cloud, hidden)
                own = ObjectRecord(kept, obj.mesh_id, obj.object_type,
                                   kept.positions.mean(axis=0) if len(kept) else obj.relative_translation,
                                   obj.yaw, obj.pose_tag)
        step = recombine(cloud, own, occ, mesh, object_id)
        keep = np.ones(len(provenance), dtype=bool)
        keep[occ.occluded_indices] = False
        n_scene -= int(np.count_nonzero(provenance[occ.occluded_indices] == SCENE_TAG))
        n_object = n_object - int(np.count_nonzero(provenance[occ.occluded_indices] != SCENE_TAG)) + len(own.cloud)
        provenance = np.concatenate([provenance[keep], np.array([object_id] * len(own.cloud), dtype=object)])
        cloud = step.cloud
        labels.extend(step.labels)
        filled.extend(f for f in step.filled_attributes if f not in filled)
        prior.append(mesh)
    return RecombinedScene(cloud, tuple(labels), provenance, n_scene, n_object, tuple(filled))


_MIN_HALF_EXTENT = 1e-6


def make_label(obj: ObjectRecord, aligned_mesh: TriangleMesh | None = None, object_id: str | None = None) -> OrientedBox:
    """Yaw-aligned box: extents from the mesh (or cloud) bounds in the object's yaw frame."""
    if aligned_mesh is not None:
        pts = aligned_mesh.vertices
    else:
        pts = obj.cloud.positions
    if len(pts) == 0:
        raise ValueError("no geometry to derive a label from")
    r = rot_z(obj.yaw)
    local = pts @ r  # R^T p per row
    lo, hi = local.min(axis=0), local.max(axis=0)
    center = r @ (0.5 * (lo + hi))
    half = np.maximum(0.5 * (hi - lo), _MIN_HALF_EXTENT)
    return OrientedBox(
        center=tuple(float(c) for c in center),
        half_extents=tuple(float(h) for h in half),
        yaw=float(obj.yaw),
        object_type=obj.object_type,
        object_id=object_id or obj.mesh_id,
    )


def _check_grid(azimuth: float, original: float, step: float) -> None:
    if azimuth == original:
        return
    k = azimuth / step
    if abs(k - round(k)) > 1e-9:
        raise OffGridAzimuthError(
            f"azimuth {math.degrees(azimuth):.6f} deg is not on the {math.degrees(step):g} deg grid"
        )


def place_at_azimuth(
    obj: ObjectRecord,
    mesh: TriangleMesh,
    azimuth: float,
    step: float = DEFAULT_AZIMUTH_STEP,
) -> tuple[ObjectRecord, TriangleMesh]:
    """Orbit the object (cloud, mesh and yaw) about the sensor Z axis to ``azimuth``.

    Only the bearing changes: range, height and the object's orientation
    relative to the sensor are preserved. The original bearing is always
    accepted (identity); any other target must lie on the ``step`` grid.
    """
    original = obj.azimuth
    _check_grid(azimuth, original, step)
    delta = azimuth - original
    if delta == 0.0:
        return obj, mesh
    t = SimilarityTransform(rot_z(delta))
    cloud = obj.cloud.with_positions(t.apply(obj.cloud.positions))
    placed = ObjectRecord(
        cloud=cloud,
        mesh_id=obj.mesh_id,
        object_type=obj.object_type,
        relative_translation=cloud.positions.mean(axis=0) if len(cloud) else t.apply(obj.relative_translation),
        yaw=wrap_angle(obj.yaw + delta),
        pose_tag=obj.pose_tag,
    )
    return placed, mesh.transformed(t)


def labels_to_json(labels, frame: str | None = None) -> str:
    payload = {"frame": frame, "boxes": [b.as_dict() for b in labels]}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
