"""Exact nearest-neighbor and ray/mesh acceleration structures.

``NeighborIndex`` wraps :class:`scipy.spatial.cKDTree` (exact k-d tree).
``RaycastIndex`` is a median-split BVH; traversal and the intersection kernel
are compiled with numba (nearest child first, early exit once the best hit is
closer than every remaining box).

Ray/triangle intersection uses the watertight formulation of Woop, Benthin and
Wald (shear into ray space, edge functions, no epsilon). Edge functions of a
shared edge are exact negations of each other, and zeros are resolved by a
direction rule so a ray through a shared edge is claimed by exactly one of
the two triangles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .core import TriangleMesh

__all__ = [
    "NeighborIndex",
    "build_neighbor_index",
    "nearest",
    "Ray",
    "HitSet",
    "RaycastIndex",
    "build_raycast_index",
    "cast_rays",
    "intersect_triangles",
    "RAY_EPS",
]

# hits with t <= RAY_EPS are discarded (origin offset of RAY_EPS * |direction|)
RAY_EPS = 1e-7


class NeighborIndex:
    """Exact k-d tree over a fixed (N, 3) point set."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise ValueError("empty point set")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, queries, upper_bound: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
        """Return (indices, distances) of the nearest indexed point per query.

        With a finite ``upper_bound``, queries with nothing closer get
        distance inf and index ``len(self)``; the search is much cheaper.
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(q) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        dist, idx = self._tree.query(q, k=1, distance_upper_bound=upper_bound)
        return idx.astype(np.int64), dist

    def leaf_order(self) -> np.ndarray:
        """Permutation of the indexed points in tree-leaf order."""
        return np.asarray(self._tree.indices, dtype=np.int64)

    def knn(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        k_eff = min(k, len(self.points))
        dist, idx = self._tree.query(q, k=k_eff)
        if k_eff == 1:
            dist, idx = dist[:, None], idx[:, None]
        return idx.astype(np.int64), dist

    def radius(self, queries, r: float, return_length: bool = False):
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        return self._tree.query_ball_point(q, r, return_sorted=True, return_length=return_length)

    def count_within(self, queries, r) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        return np.asarray(self._tree.query_ball_point(q, r, return_length=True), dtype=np.int64)


def build_neighbor_index(points) -> NeighborIndex:
    return NeighborIndex(points)


def nearest(index: NeighborIndex, q) -> tuple[int, float]:
    """Single-query convenience wrapper around :meth:`NeighborIndex.nearest`."""
    idx, dist = index.nearest(np.asarray(q, dtype=np.float64).reshape(1, 3))
    return int(idx[0]), float(dist[0])


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if not np.any(d):
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class HitSet:
    """Nearest-hit parameter per ray (+inf on miss) and the hit triangle (-1 on miss)."""

    t_hit: np.ndarray
    triangle: np.ndarray

    def __len__(self) -> int:
        return len(self.t_hit)

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.t_hit)


@njit(cache=True, inline="always")
def _owns(px, py, qx, qy, back):
    # exact-zero edge functions belong to edges pointing in the positive
    # lexicographic (dy, dx) direction; reversed for back-facing triangles
    dx = qx - px
    dy = qy - py
    positive = dy > 0.0 or (dy == 0.0 and dx > 0.0)
    return positive != back


@njit(cache=True, inline="always")
def _inside(e, px, py, qx, qy, back):
    if back:
        if e < 0.0:
            return True
    elif e > 0.0:
        return True
    return e == 0.0 and _owns(px, py, qx, qy, back)


@njit(cache=True)
def _ray_setup(d):
    ax, ay, az = abs(d[0]), abs(d[1]), abs(d[2])
    kz = 0
    if ay > ax:
        kz = 1
    if az > max(ax, ay):
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx
    return kx, ky, kz, d[kx] / d[kz], d[ky] / d[kz], 1.0 / d[kz]


@njit(cache=True)
def _hit(o, kx, ky, kz, sx, sy, sz, v0, v1, v2, t_min):
    """Watertight intersection; returns t or +inf."""
    a0, a1, a2 = v0[kx] - o[kx], v0[ky] - o[ky], v0[kz] - o[kz]
    b0, b1, b2 = v1[kx] - o[kx], v1[ky] - o[ky], v1[kz] - o[kz]
    c0, c1, c2 = v2[kx] - o[kx], v2[ky] - o[ky], v2[kz] - o[kz]
    ax = a0 - sx * a2
    ay = a1 - sy * a2
    bx = b0 - sx * b2
    by = b1 - sy * b2
    cx = c0 - sx * c2
    cy = c1 - sy * c2
    u = cx * by - cy * bx  # edge v1 -> v2
    v = ax * cy - ay * cx  # edge v2 -> v0
    w = bx * ay - by * ax  # edge v0 -> v1
    det = u + v + w
    if det == 0.0:
        return np.inf
    back = det < 0.0
    if not (_inside(u, bx, by, cx, cy, back) and _inside(v, cx, cy, ax, ay, back)
            and _inside(w, ax, ay, bx, by, back)):
        return np.inf
    t = (u * (sz * a2) + v * (sz * b2) + w * (sz * c2)) / det
    if t > t_min:
        return t
    return np.inf


@njit(cache=True)
def _pairs_kernel(o, d, v0, v1, v2, t_min, out):
    for i in range(len(out)):
        kx, ky, kz, sx, sy, sz = _ray_setup(d[i])
        out[i] = _hit(o[i], kx, ky, kz, sx, sy, sz, v0[i], v1[i], v2[i], t_min)


def intersect_triangles(origins, directions, v0, v1, v2, t_min: float = RAY_EPS) -> np.ndarray:
    """Watertight ray/triangle test over broadcast (ray, triangle) pairs.

    All inputs are (..., 3) arrays that broadcast against each other. Returns the
    hit parameter ``t`` (units of |direction|) or +inf for misses, zero
    directions and hits with ``t <= t_min``.
    """
    arrs = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (origins, directions, v0, v1, v2)))
    shape = arrs[0].shape[:-1]
    flat = [np.ascontiguousarray(a.reshape(-1, 3)) for a in arrs]
    out = np.empty(len(flat[0]))
    nonzero = np.any(flat[1] != 0, axis=1)
    out[:] = np.inf
    if np.any(nonzero):
        sub = np.empty(int(nonzero.sum()))
        _pairs_kernel(*(f[nonzero] for f in flat), t_min, sub)
        out[nonzero] = sub
    return out.reshape(shape)


@njit(cache=True)
def _slab(o, inv, lo, hi):
    tnear = -np.inf
    tfar = np.inf
    for k in range(3):
        t1 = (lo[k] - o[k]) * inv[k]
        t2 = (hi[k] - o[k]) * inv[k]
        # NaN from 0 * inf (origin on a slab plane, zero direction component) constrains nothing
        if t1 == t1 and t2 == t2:
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tnear:
                tnear = t1
            if t2 < tfar:
                tfar = t2
    return tnear, tfar


@njit(cache=True)
def _traverse(origins, dirs, v0, v1, v2, node_lo, node_hi, left, right, start, count, order,
              t_min, out_t, out_tri):
    stack = np.empty(128, dtype=np.int64)
    for r in range(len(dirs)):
        d = dirs[r]
        o = origins[r]
        out_t[r] = np.inf
        out_tri[r] = -1
        if d[0] == 0.0 and d[1] == 0.0 and d[2] == 0.0:
            continue
        inv = np.empty(3)
        for k in range(3):
            inv[k] = 1.0 / d[k] if d[k] != 0.0 else (np.inf if d[k] >= 0.0 else -np.inf)
        kx, ky, kz, sx, sy, sz = _ray_setup(d)
        best = np.inf
        best_tri = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            tn, tf = _slab(o, inv, node_lo[node], node_hi[node])
            if tn > tf or tf <= t_min or tn > best:
                continue
            if count[node] > 0:
                for k in range(start[node], start[node] + count[node]):
                    tri = order[k]
                    t = _hit(o, kx, ky, kz, sx, sy, sz, v0[tri], v1[tri], v2[tri], t_min)
                    if t < best or (t == best and t < np.inf and tri < best_tri):
                        best = t
                        best_tri = tri
                continue
            l, rr = left[node], right[node]
            tl, _ = _slab(o, inv, node_lo[l], node_hi[l])
            tr, _ = _slab(o, inv, node_lo[rr], node_hi[rr])
            # push the farther child first so the nearer one is popped next
            if tl <= tr:
                stack[sp] = rr
                stack[sp + 1] = l
            else:
                stack[sp] = l
                stack[sp + 1] = rr
            sp += 2
        out_t[r] = best
        out_tri[r] = best_tri


class RaycastIndex:
    """Bounding-volume hierarchy over a triangle mesh (median split, small leaves)."""

    LEAF_SIZE = 4

    def __init__(self, mesh: TriangleMesh):
        if len(mesh) == 0:
            raise ValueError("cannot build a raycast index over an empty mesh")
        self.mesh = mesh
        a, b, c = mesh.corners()
        self._v0, self._v1, self._v2 = (np.ascontiguousarray(x) for x in (a, b, c))
        self._build(np.minimum(np.minimum(a, b), c), np.maximum(np.maximum(a, b), c))

    def _build(self, tri_lo, tri_hi):
        n = len(tri_lo)
        centers = 0.5 * (tri_lo + tri_hi)
        order = np.arange(n)
        lo_list, hi_list, left, right, start, count = [], [], [], [], [], []

        def new_node():
            lo_list.append(None)
            hi_list.append(None)
            for lst in (left, right, start, count):
                lst.append(-1)
            return len(left) - 1

        root = new_node()
        stack = [(root, 0, n)]
        while stack:
            node, s, e = stack.pop()
            idx = order[s:e]
            lo = tri_lo[idx].min(axis=0)
            hi = tri_hi[idx].max(axis=0)
            # pad so the slab test stays conservative under rounding
            pad = 1e-9 * np.max(hi - lo) + 1e-12
            lo_list[node] = lo - pad
            hi_list[node] = hi + pad
            if e - s <= self.LEAF_SIZE:
                start[node], count[node] = s, e - s
                continue
            c = centers[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (e - s) // 2
            part = np.argsort(c[:, axis], kind="stable")
            order[s:e] = idx[part]
            l_node, r_node = new_node(), new_node()
            left[node], right[node] = l_node, r_node
            stack.append((r_node, s + mid, e))
            stack.append((l_node, s, s + mid))

        self.node_lo = np.array(lo_list)
        self.node_hi = np.array(hi_list)
        self.node_left = np.array(left, dtype=np.int64)
        self.node_right = np.array(right, dtype=np.int64)
        self.node_start = np.array(start, dtype=np.int64)
        self.node_count = np.array(count, dtype=np.int64)
        self.tri_order = order.astype(np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.node_left)

    def cast(self, origins, directions, t_min: float = RAY_EPS) -> HitSet:
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        o, d = (np.ascontiguousarray(a) for a in np.broadcast_arrays(o, d))
        t_out = np.empty(len(d))
        tri_out = np.empty(len(d), dtype=np.int64)
        _traverse(o, d, self._v0, self._v1, self._v2, self.node_lo, self.node_hi, self.node_left,
                  self.node_right, self.node_start, self.node_count, self.tri_order, float(t_min),
                  t_out, tri_out)
        return HitSet(t_out, tri_out)


def build_raycast_index(mesh: TriangleMesh) -> RaycastIndex:
    return RaycastIndex(mesh)


def cast_rays(index: RaycastIndex, origins, directions) -> HitSet:
    """Nearest hit per ray; ``t`` is in units of |direction|, +inf on miss.

    Zero-direction rays report a miss.
    """
    return index.cast(origins, directions)
