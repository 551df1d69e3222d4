"""Geometry and record types shared by every pipeline stage.

All positions live in a sensor-centered, right-handed frame: the origin is the
sensor's optical center and +Z points up. Arrays handed to these types are
copied and frozen (``writeable = False``) so instances can be shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "PointCloud",
    "TriangleMesh",
    "SimilarityTransform",
    "Aabb",
    "ObjectRecord",
    "SceneRecord",
    "transform_cloud",
    "transform_points",
    "centroid",
    "wrap_angle",
    "rot_z",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def wrap_angle(angle: float) -> float:
    """Map an angle in radians into [-pi, pi); in-range angles are returned as is."""
    angle = float(angle)
    if -math.pi <= angle < math.pi:
        return angle
    wrapped = (angle + math.pi) % (2.0 * math.pi) - math.pi
    # float modulo can land exactly on +pi for inputs just below -pi
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class PointCloud:
    """Columnar point storage: an (N, 3) float64 position array plus named
    per-point attribute arrays of any numpy dtype (``intensity``, ``ring``, ``t``...).
    """

    __slots__ = ("_positions", "_attributes")

    def __init__(self, positions, attributes: Mapping[str, np.ndarray] | None = None):
        pos = np.asarray(positions, dtype=np.float64)
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must have shape (N, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")
        attrs: dict[str, np.ndarray] = {}
        for name, values in (attributes or {}).items():
            arr = np.asarray(values)
            if arr.ndim != 1 or len(arr) != len(pos):
                raise ValueError(
                    f"attribute {name!r} has shape {arr.shape}, expected ({len(pos)},)"
                )
            attrs[str(name)] = _frozen(arr)
        self._positions = _frozen(pos)
        self._attributes = attrs

    @property
    def positions(self) -> np.ndarray:
        return self._positions

    @property
    def attributes(self) -> dict[str, np.ndarray]:
        # shallow copy: arrays are read-only, the mapping must not be mutated
        return dict(self._attributes)

    @property
    def attribute_names(self) -> list[str]:
        return list(self._attributes)

    def __len__(self) -> int:
        return len(self._positions)

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)}, attributes={self.attribute_names})"

    def __getitem__(self, name: str) -> np.ndarray:
        return self._attributes[name]

    def select(self, index) -> "PointCloud":
        """Subset by boolean mask or integer index array, keeping order."""
        index = np.asarray(index)
        return PointCloud(
            self._positions[index],
            {k: v[index] for k, v in self._attributes.items()},
        )

    def with_positions(self, positions) -> "PointCloud":
        return PointCloud(positions, self._attributes)

    def with_attribute(self, name: str, values) -> "PointCloud":
        attrs = dict(self._attributes)
        attrs[name] = values
        return PointCloud(self._positions, attrs)

    def schema(self) -> dict[str, np.dtype]:
        return {k: v.dtype for k, v in self._attributes.items()}

    def equals(self, other: "PointCloud") -> bool:
        """Bitwise equality of positions and attributes (names, order, dtypes, values)."""
        if self.attribute_names != other.attribute_names:
            return False
        if self._positions.tobytes() != other._positions.tobytes():
            return False
        return all(
            a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for a, b in zip(self._attributes.values(), other._attributes.values())
        )

    @classmethod
    def empty(cls, schema: Mapping[str, np.dtype] | None = None) -> "PointCloud":
        return cls(np.zeros((0, 3)), {k: np.zeros(0, dtype=d) for k, d in (schema or {}).items()})


class TriangleMesh:
    """Indexed triangle set. Triangles repeating a vertex index are rejected."""

    __slots__ = ("_vertices", "_triangles")

    def __init__(self, vertices, triangles):
        v = np.asarray(vertices, dtype=np.float64)
        if v.size == 0:
            v = v.reshape(0, 3)
        t = np.asarray(triangles, dtype=np.int64)
        if t.size == 0:
            t = t.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (N, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError(f"triangles must have shape (M, 3), got {t.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices contain non-finite values")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        bad = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        if np.any(bad):
            raise ValueError(f"{int(bad.sum())} degenerate triangles repeat a vertex index")
        self._vertices = _frozen(v)
        self._triangles = _frozen(t)

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def triangles(self) -> np.ndarray:
        return self._triangles

    def __len__(self) -> int:
        return len(self._triangles)

    def __repr__(self) -> str:
        return f"TriangleMesh(vertices={len(self._vertices)}, triangles={len(self._triangles)})"

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self._vertices, self._triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def bounds(self) -> "Aabb":
        return Aabb(self._vertices.min(axis=0), self._vertices.max(axis=0))

    def vertex_centroid(self) -> np.ndarray:
        return self._vertices.mean(axis=0)

    def transformed(self, t: "SimilarityTransform") -> "TriangleMesh":
        return TriangleMesh(t.apply(self._vertices), self._triangles)

    @staticmethod
    def merge(meshes) -> "TriangleMesh":
        verts, tris, offset = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + offset)
            offset += len(m.vertices)
        if not verts:
            return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R @ p + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(r) <= 0:
            raise ValueError("rotation must have det = +1")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(tr))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0), scale: float = 1.0):
        return cls(rot_z(yaw), np.asarray(translation, dtype=np.float64), scale)

    @classmethod
    def about_pivot(cls, rotation, pivot, scale: float = 1.0) -> "SimilarityTransform":
        """Rotate/scale about ``pivot`` instead of the origin."""
        pivot = np.asarray(pivot, dtype=np.float64)
        rotation = np.asarray(rotation, dtype=np.float64)
        return cls(rotation, pivot - scale * rotation @ pivot, scale)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Return self ∘ other (apply ``other`` first)."""
        return SimilarityTransform(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(rt, -(rt @ self.translation) / self.scale, 1.0 / self.scale)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", _frozen(lo))
        object.__setattr__(self, "max", _frozen(hi))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((p >= self.min) & (p <= self.max), axis=1)

    def expanded(self, margin) -> "Aabb":
        return Aabb(self.min - margin, self.max + margin)

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min


@dataclass(frozen=True)
class ObjectRecord:
    """An object scan kept at its measured, sensor-relative position.

    ``relative_translation`` is the cloud centroid (sensor center -> object
    centroid). An empty cloud skips the centroid check.
    """

    cloud: PointCloud
    mesh_id: str
    object_type: str
    relative_translation: np.ndarray
    yaw: float
    pose_tag: str = ""

    CENTROID_TOL = 1e-6

    def __post_init__(self):
        tr = np.asarray(self.relative_translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "relative_translation", _frozen(tr))
        yaw = float(self.yaw)
        if not (-math.pi <= yaw < math.pi):
            raise ValueError(f"yaw {yaw} outside [-pi, pi)")
        if len(self.cloud):
            c = centroid(self.cloud)
            if np.max(np.abs(c - tr)) > self.CENTROID_TOL:
                raise ValueError(
                    f"relative_translation {tr.tolist()} differs from cloud centroid {c.tolist()}"
                )

    @property
    def range(self) -> float:
        return float(np.linalg.norm(self.relative_translation))

    @property
    def azimuth(self) -> float:
        return math.atan2(self.relative_translation[1], self.relative_translation[0])


@dataclass(frozen=True)
class SceneRecord:
    cloud: PointCloud
    sensor_height: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sensor_height > 0:
            raise ValueError("sensor_height must be positive")


def transform_points(points, t: SimilarityTransform) -> np.ndarray:
    return t.apply(points)


def transform_cloud(cloud: PointCloud, t: SimilarityTransform) -> PointCloud:
    """Map positions through ``t``; attributes are carried over untouched."""
    return cloud.with_positions(t.apply(cloud.positions))


def centroid(cloud) -> np.ndarray:
    pts = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty point set")
    return pts.mean(axis=0)
