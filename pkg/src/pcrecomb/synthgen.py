"""Synthetic worlds and an idealized spinning LiDAR for desk-scale oracles.

Worlds are lists of analytic primitives, each exporting a closed, outward
oriented triangle mesh. The scanner casts one ray per (channel, column) beam
against the merged world mesh; returns carry a constant intensity placeholder,
the channel index (``ring``) and a per-column timestamp ``t`` in nanoseconds.

World files are plain text, one primitive per line::

    # comment
    scanner channels=128 resolution=1024 vfov=45 max_range=120 noise=0.0
    ground z=-1.5 half_size=40
    box position=10,0,-1.5 size=1,2,1.2 yaw=0.3
    humanoid position=6,1,-1.5 yaw=1.57
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .core import ObjectRecord, PointCloud, SimilarityTransform, TriangleMesh, centroid, wrap_angle
from .spatial import RaycastIndex

__all__ = [
    "Ground",
    "Box",
    "Sphere",
    "Cylinder",
    "Humanoid",
    "Terrain",
    "LShape",
    "SyntheticWorld",
    "VirtualScanner",
    "render_scan",
    "render_object_in_lab",
    "beam_columns",
    "parse_world",
    "load_world",
    "clutter",
    "is_watertight",
    "triangulate_polygon",
    "extrude_polygon",
]

# ---------------------------------------------------------------------------
# mesh construction helpers


def _orient_convex(vertices: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Flip triangles of a convex solid so normals point away from its center."""
    c = vertices.mean(axis=0)
    a, b, d = vertices[tris[:, 0]], vertices[tris[:, 1]], vertices[tris[:, 2]]
    n = np.cross(b - a, d - a)
    flip = np.einsum("ij,ij->i", n, (a + b + d) / 3.0 - c) < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def _box_mesh(lo, hi) -> TriangleMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = np.array([t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))])
    return TriangleMesh(v, _orient_convex(v, tris))


def triangulate_polygon(points2d) -> np.ndarray:
    """Ear-clipping triangulation of a simple polygon; returns CCW index triples."""
    pts = np.asarray(points2d, dtype=np.float64)
    n = len(pts)
    x, y = pts[:, 0], pts[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    idx = list(range(n)) if area2 > 0 else list(range(n))[::-1]

    def cross(o, a, b):
        return (pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1]) - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0])

    def inside(p, a, b, c):
        return cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0

    out = []
    guard = 0
    while len(idx) > 3:
        m = len(idx)
        for k in range(m):
            a, b, c = idx[k - 1], idx[k], idx[(k + 1) % m]
            if cross(a, b, c) <= 0:
                continue
            if any(inside(p, a, b, c) for p in idx if p not in (a, b, c)):
                continue
            out.append((a, b, c))
            del idx[k]
            break
        else:
            raise ValueError("polygon is not simple")
        guard += 1
        if guard > 10 * n:
            raise ValueError("ear clipping did not terminate")
    out.append(tuple(idx))
    return np.array(out, dtype=np.int64)


def extrude_polygon(profile_xz, y0: float, y1: float) -> TriangleMesh:
    """Extrude a polygon given in the X-Z plane along Y from ``y0`` to ``y1``."""
    p = np.asarray(profile_xz, dtype=np.float64)
    n = len(p)
    x, z = p[:, 0], p[:, 1]
    if np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z) < 0:
        p = p[::-1]
    caps = triangulate_polygon(p)
    v = np.vstack([np.column_stack([p[:, 0], np.full(n, y0), p[:, 1]]),
                   np.column_stack([p[:, 0], np.full(n, y1), p[:, 1]])])
    tris = [caps, caps[:, ::-1] + n]
    i = np.arange(n)
    j = (i + 1) % n
    tris.append(np.column_stack([i, j + n, j]))
    tris.append(np.column_stack([i, i + n, j + n]))
    return TriangleMesh(v, np.vstack(tris))


def _icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return np.array(verts), np.array(f, dtype=np.int64)


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every directed edge has exactly one opposite partner (closed, consistently oriented)."""
    t = mesh.triangles
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    fwd = {tuple(x) for x in e.tolist()}
    if len(fwd) != len(e):
        return False
    return all((b, a) in fwd for a, b in fwd)


def _placed(mesh: TriangleMesh, position, yaw: float) -> TriangleMesh:
    return mesh.transformed(SimilarityTransform.from_yaw(yaw, position))


def _vec(v) -> tuple[float, float, float]:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return (float(a[0]), float(a[1]), float(a[2]))


# ---------------------------------------------------------------------------
# primitives. ``position`` is the base center unless noted.


@dataclass(frozen=True)
class Ground:
    """Horizontal slab whose top face is at ``z``."""

    z: float = -1.5
    half_size: float = 50.0
    thickness: float = 0.5
    center: tuple = (0.0, 0.0)

    def mesh(self) -> TriangleMesh:
        cx, cy = self.center
        h = self.half_size
        return _box_mesh((cx - h, cy - h, self.z - self.thickness), (cx + h, cy + h, self.z))


@dataclass(frozen=True)
class Box:
    position: tuple = (0.0, 0.0, 0.0)
    size: tuple = (1.0, 1.0, 1.0)
    yaw: float = 0.0

    def mesh(self) -> TriangleMesh:
        sx, sy, sz = self.size
        return _placed(_box_mesh((-sx / 2, -sy / 2, 0.0), (sx / 2, sy / 2, sz)), self.position, self.yaw)


@dataclass(frozen=True)
class Sphere:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    subdivisions: int = 2

    def mesh(self) -> TriangleMesh:
        v, f = _icosphere(self.subdivisions)
        v = v * self.radius + np.asarray(self.center, float)
        return TriangleMesh(v, _orient_convex(v, f))


@dataclass(frozen=True)
class Cylinder:
    position: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.1
    height: float = 3.0
    segments: int = 16

    def mesh(self) -> TriangleMesh:
        a = 2 * np.pi * np.arange(self.segments) / self.segments
        ring = np.column_stack([self.radius * np.cos(a), self.radius * np.sin(a)])
        n = self.segments
        v = np.vstack([np.column_stack([ring, np.zeros(n)]), np.column_stack([ring, np.full(n, self.height)]),
                       [[0, 0, 0], [0, 0, self.height]]])
        i = np.arange(n)
        j = (i + 1) % n
        tris = np.vstack([np.column_stack([i, j, j + n]), np.column_stack([i, j + n, i + n]),
                          np.column_stack([np.full(n, 2 * n), j, i]),
                          np.column_stack([np.full(n, 2 * n + 1), i + n, j + n])])
        v = v + np.asarray(self.position, float)
        return TriangleMesh(v, _orient_convex(v, tris))


# side profile in the X-Z plane, X forward; flat soles at z=0 and flat crown at z=1.8
_HUMANOID_PROFILE = [
    (-0.12, 0.0), (0.18, 0.0), (0.18, 0.08), (0.05, 0.10), (0.06, 0.85), (0.12, 1.05),
    (0.14, 1.35), (0.10, 1.45), (0.04, 1.50), (0.10, 1.58), (0.11, 1.70), (0.06, 1.80),
    (-0.08, 1.80), (-0.12, 1.68), (-0.10, 1.52), (-0.14, 1.42), (-0.16, 1.20),
    (-0.12, 0.95), (-0.08, 0.85), (-0.08, 0.10), (-0.12, 0.08),
]


@dataclass(frozen=True)
class Humanoid:
    """Extruded standing silhouette (1.8 m) with a bag on its left side.

    The profile is front/back asymmetric and the bag breaks left/right
    symmetry, so no rotation about Z maps the shape onto itself or its mirror.
    """

    position: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    scale: float = 1.0

    def local_mesh(self) -> TriangleMesh:
        body = extrude_polygon(_HUMANOID_PROFILE, -0.2, 0.2)
        bag = _box_mesh((-0.06, 0.21, 0.80), (0.10, 0.33, 1.20))
        m = TriangleMesh.merge([body, bag])
        if self.scale != 1.0:
            m = m.transformed(SimilarityTransform(scale=self.scale))
        return m

    def mesh(self) -> TriangleMesh:
        return _placed(self.local_mesh(), self.position, self.yaw)


@dataclass(frozen=True)
class LShape:
    """Closed L-shaped prism, chiral under reflection about the X-Z plane."""

    position: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    mirrored: bool = False

    def local_mesh(self) -> TriangleMesh:
        base = _box_mesh((0.0, 0.0, 0.0), (1.0, 0.3, 0.3))
        arm = _box_mesh((0.0, 0.35, 0.0), (0.3, 0.9, 0.3))
        tower = _box_mesh((0.7, 0.0, 0.35), (1.0, 0.3, 1.2))
        m = TriangleMesh.merge([base, arm, tower])
        if self.mirrored:
            v = m.vertices * np.array([1.0, -1.0, 1.0])
            m = TriangleMesh(v, m.triangles[:, ::-1])
        return m

    def mesh(self) -> TriangleMesh:
        return _placed(self.local_mesh(), self.position, self.yaw)


@dataclass(frozen=True)
class Terrain:
    """Closed heightfield block: smooth random bumps over a square footprint."""

    center: tuple = (0.0, 0.0)
    half_size: float = 20.0
    resolution: int = 60
    base_z: float = -1.5
    amplitude: float = 0.15
    wavelength: float = 3.0
    seed: int = 0
    thickness: float = 0.5

    def height(self, x, y) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        k = rng.normal(size=(6, 2)) * (2 * np.pi / self.wavelength)
        ph = rng.uniform(0, 2 * np.pi, 6)
        h = sum(np.sin(k[i, 0] * x + k[i, 1] * y + ph[i]) for i in range(6))
        return self.base_z + self.amplitude * h / math.sqrt(6)

    def mesh(self) -> TriangleMesh:
        n = self.resolution
        cx, cy = self.center
        xs = cx + np.linspace(-self.half_size, self.half_size, n + 1)
        ys = cy + np.linspace(-self.half_size, self.half_size, n + 1)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        top = np.column_stack([gx.ravel(), gy.ravel(), self.height(gx, gy).ravel()])
        vid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
        a, b = vid[:-1, :-1].ravel(), vid[1:, :-1].ravel()
        c, d = vid[1:, 1:].ravel(), vid[:-1, 1:].ravel()
        tris = [np.column_stack([a, b, c]), np.column_stack([a, c, d])]
        # boundary loop, counter-clockwise seen from above
        loop = np.concatenate([vid[:, 0], vid[-1, 1:], vid[-2::-1, -1], vid[0, -2:0:-1]])
        zb = self.base_z - self.amplitude * 3 - self.thickness
        m = len(loop)
        base = len(top)
        bottom = np.column_stack([top[loop, 0], top[loop, 1], np.full(m, zb)])
        verts = np.vstack([top, bottom, [[cx, cy, zb]]])
        k = np.arange(m)
        k1 = (k + 1) % m
        bk, bk1 = base + k, base + k1
        tris.append(np.column_stack([bk, bk1, loop[k1]]))
        tris.append(np.column_stack([bk, loop[k1], loop[k]]))
        tris.append(np.column_stack([np.full(m, base + m), bk1, bk]))
        return TriangleMesh(verts, np.vstack(tris))


_PRIMITIVES = {"ground": Ground, "box": Box, "sphere": Sphere, "cylinder": Cylinder,
               "pole": Cylinder, "humanoid": Humanoid, "terrain": Terrain, "lshape": LShape}


@dataclass(frozen=True)
class SyntheticWorld:
    primitives: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def mesh(self) -> TriangleMesh:
        return TriangleMesh.merge([p.mesh() for p in self.primitives])

    def with_primitive(self, primitive) -> "SyntheticWorld":
        return SyntheticWorld(self.primitives + (primitive,))


@dataclass(frozen=True)
class VirtualScanner:
    """Spinning multi-beam range sensor at the origin (OS1-128-like defaults)."""

    channels: int = 128
    resolution: int = 1024
    vfov: float = 45.0  # degrees, symmetric about the horizon
    max_range: float = 120.0
    noise: float = 0.0  # Gaussian range sigma, meters
    azimuth_window: tuple | None = None  # (min_deg, max_deg) subset of columns, None = full turn
    frame_period_ns: int = 100_000_000
    intensity: float = 100.0

    def __post_init__(self):
        if self.channels < 1 or self.resolution < 1:
            raise ValueError("channels and resolution must be >= 1")

    def elevations(self) -> np.ndarray:
        half = math.radians(self.vfov) / 2
        if self.channels == 1:
            return np.zeros(1)
        return np.linspace(half, -half, self.channels)

    def azimuths(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.resolution) / self.resolution

    def columns(self) -> np.ndarray:
        cols = np.arange(self.resolution)
        if self.azimuth_window is None:
            return cols
        lo, hi = (math.radians(a) for a in self.azimuth_window)
        az = self.azimuths()
        rel = (az - lo) % (2 * np.pi)
        # a column exactly on the lower edge can wrap to just under 2*pi
        rel[rel > 2 * np.pi - 1e-9] = 0.0
        return cols[rel <= (hi - lo) % (2 * np.pi) + 1e-9]

    def beam_directions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unit directions for every beam, with their (ring, column) indices."""
        el = self.elevations()
        cols = self.columns()
        az = self.azimuths()[cols]
        ring = np.repeat(np.arange(self.channels), len(cols))
        col = np.tile(cols, self.channels)
        e = el[ring]
        a = az[np.tile(np.arange(len(cols)), self.channels)]
        d = np.column_stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
        return d, ring, col


def render_scan(world: SyntheticWorld, scanner: VirtualScanner, seed: int = 0,
                index: RaycastIndex | None = None) -> PointCloud:
    """One return per beam at the nearest surface; misses and far hits omitted."""
    if not world.primitives and index is None:
        raise ValueError("world is empty")
    index = index if index is not None else RaycastIndex(world.mesh())
    d, ring, col = scanner.beam_directions()
    hits = index.cast(np.zeros(3), d)
    # noise drawn for every beam so a beam's noise does not depend on world content
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, scanner.noise, scanner.channels * scanner.resolution) if scanner.noise > 0 else None
    keep = np.isfinite(hits.t_hit) & (hits.t_hit <= scanner.max_range)
    r = hits.t_hit[keep]
    if noise is not None:
        r = r + noise[ring[keep] * scanner.resolution + col[keep]]
    pts = d[keep] * r[:, None]
    dt = scanner.frame_period_ns // scanner.resolution
    return PointCloud(pts, {
        "intensity": np.full(len(pts), scanner.intensity, dtype=np.float32),
        "ring": ring[keep].astype(np.uint16),
        "t": (col[keep] * dt).astype(np.uint32),
    })


def beam_columns(cloud: PointCloud, scanner: VirtualScanner) -> np.ndarray:
    """Recover the column index of each return from its timestamp."""
    dt = scanner.frame_period_ns // scanner.resolution
    return (cloud["t"].astype(np.int64) // dt).astype(np.int64)


def render_object_in_lab(primitive, scanner: VirtualScanner, range: float, azimuth: float = 0.0,
                         sensor_height: float = 1.5, seed: int = 0, mesh_id: str = "synthetic",
                         object_type: str = "synthetic", pose_tag: str = "") -> tuple[ObjectRecord, TriangleMesh]:
    """Scan ``primitive`` alone, standing on the floor at ``range`` m (horizontal).

    The primitive is moved so its base center sits at the requested spot; its
    own yaw is kept and becomes the record's yaw.
    """
    if not 0 < range <= scanner.max_range:
        raise ValueError("range must lie within the scanner's max range")
    pos = (range * math.cos(azimuth), range * math.sin(azimuth), -sensor_height)
    placed = replace(primitive, position=pos)
    mesh = placed.mesh()
    cloud = render_scan(SyntheticWorld((placed,)), scanner, seed)
    if len(cloud):
        rel = centroid(cloud)
    else:
        rel = np.asarray(pos, dtype=np.float64)
    record = ObjectRecord(cloud, mesh_id, object_type, rel, wrap_angle(getattr(placed, "yaw", 0.0)), pose_tag)
    return record, mesh


def clutter(seed: int, region=((4.0, 14.0), (-8.0, 8.0)), count: int = 12, ground_z: float = -1.5,
            keep_out=None) -> list:
    """Random boxes, spheres and poles on the ground inside ``region``.

    ``keep_out`` is an optional ((xmin, xmax), (ymin, ymax)) rectangle left free.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        x = rng.uniform(*region[0])
        y = rng.uniform(*region[1])
        if keep_out is not None and keep_out[0][0] <= x <= keep_out[0][1] and keep_out[1][0] <= y <= keep_out[1][1]:
            continue
        kind = rng.integers(3)
        if kind == 0:
            s = rng.uniform(0.3, 1.2, 3)
            out.append(Box((x, y, ground_z), tuple(s), float(rng.uniform(0, np.pi))))
        elif kind == 1:
            r = rng.uniform(0.2, 0.6)
            out.append(Sphere((x, y, ground_z + r), r, 1))
        else:
            out.append(Cylinder((x, y, ground_z), float(rng.uniform(0.05, 0.2)), float(rng.uniform(1.0, 3.0)), 12))
    return out


# ---------------------------------------------------------------------------
# text world files


def _parse_value(text: str):
    parts = text.split(",")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        if text.lower() in ("true", "false"):
            return text.lower() == "true"
        return text
    if len(nums) == 1:
        return int(nums[0]) if parts[0].lstrip("-").isdigit() else nums[0]
    return tuple(nums)


_SCANNER_KEYS = {"channels": "channels", "resolution": "resolution", "vfov": "vfov",
                 "max_range": "max_range", "noise": "noise", "azimuth_window": "azimuth_window",
                 "intensity": "intensity"}


def parse_world(text: str) -> tuple[SyntheticWorld, VirtualScanner | None]:
    """Parse a world file; returns the world and the scanner line if present."""
    prims = []
    scanner = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *items = line.split()
        kwargs = {}
        for item in items:
            if "=" not in item:
                raise ValueError(f"line {lineno}: expected key=value, got {item!r}")
            k, v = item.split("=", 1)
            kwargs[k] = _parse_value(v)
        kind = kind.lower()
        if kind == "scanner":
            unknown = set(kwargs) - set(_SCANNER_KEYS)
            if unknown:
                raise ValueError(f"line {lineno}: unknown scanner keys {sorted(unknown)}")
            scanner = VirtualScanner(**{_SCANNER_KEYS[k]: v for k, v in kwargs.items()})
            continue
        cls = _PRIMITIVES.get(kind)
        if cls is None:
            raise ValueError(f"line {lineno}: unknown primitive {kind!r}")
        names = {f.name for f in fields(cls)}
        unknown = set(kwargs) - names
        if unknown:
            raise ValueError(f"line {lineno}: unknown {kind} keys {sorted(unknown)}")
        prims.append(cls(**kwargs))
    return SyntheticWorld(tuple(prims)), scanner


def load_world(path) -> tuple[SyntheticWorld, VirtualScanner | None]:
    return parse_world(Path(path).read_text(encoding="utf-8"))
