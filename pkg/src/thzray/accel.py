"""Bounding-volume hierarchy for nearest ray-triangle queries.

The structure is a flat median-split BVH over the scene triangles.  Batch
queries run through a numba-compiled kernel when numba is importable and
fall back to a vectorised brute-force scan otherwise; both return results
identical to a brute-force scan over every triangle.

Conventions shared by every query path (and by any external oracle that
wants to reproduce them):

* rays parallel to a triangle plane (``|dir . unit_normal| < 1e-12``) miss;
* barycentric bounds are inclusive with ``1e-12`` padding so a ray hitting
  a shared edge registers on both adjacent triangles;
* among hits whose parameters agree within ``1e-9`` relative, the lowest
  triangle index wins.
"""

from __future__ import annotations

import numpy as np

from .geometry import Hit, Scene

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco


PARALLEL_DOT_EPS = 1e-12
BARY_EPS = 1e-12
REL_TIE = 1e-9
_LEAF_SIZE = 8


def _build_flat_bvh(centroids: np.ndarray, tri_lo: np.ndarray, tri_hi: np.ndarray):
    n = len(centroids)
    order = np.arange(n, dtype=np.int64)
    node_lo, node_hi = [], []
    node_left, node_right = [], []
    node_first, node_count = [], []

    def new_node():
        node_lo.append(np.zeros(3))
        node_hi.append(np.zeros(3))
        node_left.append(-1)
        node_right.append(-1)
        node_first.append(0)
        node_count.append(0)
        return len(node_lo) - 1

    root = new_node()
    stack = [(root, 0, n)]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        node_lo[node] = tri_lo[idx].min(axis=0)
        node_hi[node] = tri_hi[idx].max(axis=0)
        count = hi - lo
        if count <= _LEAF_SIZE:
            node_first[node] = lo
            node_count[node] = count
            continue
        cent = centroids[idx]
        axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
        # Stable argsort keeps the build reproducible on tied centroids.
        local = np.argsort(cent[:, axis], kind="stable")
        order[lo:hi] = idx[local]
        mid = lo + count // 2
        left = new_node()
        right = new_node()
        node_left[node] = left
        node_right[node] = right
        stack.append((right, mid, hi))
        stack.append((left, lo, mid))

    return (
        order,
        np.asarray(node_lo, dtype=np.float64),
        np.asarray(node_hi, dtype=np.float64),
        np.asarray(node_left, dtype=np.int64),
        np.asarray(node_right, dtype=np.int64),
        np.asarray(node_first, dtype=np.int64),
        np.asarray(node_count, dtype=np.int64),
    )


def _traverse_batch(origins, dirs, t_guards,
                    node_lo, node_hi, node_left, node_right, node_first, node_count,
                    order, v0, e1, e2, normals,
                    out_tri, out_t, out_u, out_v):
    n_rays = origins.shape[0]
    stack = np.empty(128, dtype=np.int64)
    for r in range(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        guard = t_guards[r]
        best_t = np.inf
        best_id = -1
        best_u = 0.0
        best_v = 0.0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            # Slab test against the node box, honouring the current best.
            tmin = guard
            tmax = best_t * (1.0 + 2.0 * REL_TIE) if best_id >= 0 else np.inf
            ok = True
            for a in range(3):
                o = origins[r, a]
                d = dirs[r, a]
                lo = node_lo[node, a]
                hi = node_hi[node, a]
                if d > 1e-300 or d < -1e-300:
                    inv = 1.0 / d
                    t1 = (lo - o) * inv
                    t2 = (hi - o) * inv
                    if t1 > t2:
                        t1, t2 = t2, t1
                    if t1 > tmin:
                        tmin = t1
                    if t2 < tmax:
                        tmax = t2
                    if tmin > tmax:
                        ok = False
                        break
                elif o < lo or o > hi:
                    ok = False
                    break
            if not ok:
                continue
            count = node_count[node]
            if count == 0:
                stack[top] = node_left[node]
                top += 1
                stack[top] = node_right[node]
                top += 1
                continue
            first = node_first[node]
            for k in range(first, first + count):
                tri = order[k]
                ndot = (dx * normals[tri, 0] + dy * normals[tri, 1]
                        + dz * normals[tri, 2])
                if -PARALLEL_DOT_EPS < ndot < PARALLEL_DOT_EPS:
                    continue
                e1x, e1y, e1z = e1[tri, 0], e1[tri, 1], e1[tri, 2]
                e2x, e2y, e2z = e2[tri, 0], e2[tri, 1], e2[tri, 2]
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                inv_det = 1.0 / det
                tx = ox - v0[tri, 0]
                ty = oy - v0[tri, 1]
                tz = oz - v0[tri, 2]
                u = (tx * px + ty * py + tz * pz) * inv_det
                if u < -BARY_EPS or u > 1.0 + BARY_EPS:
                    continue
                qx = ty * e1z - tz * e1y
                qy = tz * e1x - tx * e1z
                qz = tx * e1y - ty * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv_det
                if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
                if t <= guard:
                    continue
                if best_id < 0:
                    best_t, best_id, best_u, best_v = t, tri, u, v
                    continue
                scale = t if t > best_t else best_t
                tie = abs(t - best_t) <= REL_TIE * scale
                if tie:
                    if tri < best_id:
                        best_t, best_id, best_u, best_v = t, tri, u, v
                elif t < best_t:
                    best_t, best_id, best_u, best_v = t, tri, u, v
        out_tri[r] = best_id
        out_t[r] = best_t if best_id >= 0 else np.inf
        out_u[r] = best_u
        out_v[r] = best_v


_traverse_batch_jit = njit(cache=True)(_traverse_batch) if _HAVE_NUMBA else None


def brute_nearest_batch(scene: Scene, origins: np.ndarray, dirs: np.ndarray,
                        t_guards: np.ndarray):
    """Vectorised scan over every triangle; the no-BVH reference path."""
    m = len(origins)
    out_tri = np.full(m, -1, dtype=np.int64)
    out_t = np.full(m, np.inf)
    out_u = np.zeros(m)
    out_v = np.zeros(m)
    if scene.n_triangles == 0 or m == 0:
        return out_tri, out_t, out_u, out_v
    v0, e1, e2, normals = scene.v0, scene.e1, scene.e2, scene.normals
    # Chunk rays to bound the (rays x triangles) temporaries.
    chunk = max(1, int(4e6) // max(1, scene.n_triangles))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        o = origins[lo:hi, None, :]
        d = dirs[lo:hi, None, :]
        ndot = dirs[lo:hi] @ normals.T
        pvec = np.cross(d, e2[None, :, :])
        det = np.einsum("kj,rkj->rk", e1, pvec)
        parallel = np.abs(ndot) < PARALLEL_DOT_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = np.where(parallel, np.nan, 1.0 / det)
            tvec = o - v0[None, :, :]
            u = np.einsum("rkj,rkj->rk", tvec, pvec) * inv_det
            qvec = np.cross(tvec, e1[None, :, :])
            v = (d * qvec).sum(axis=2) * inv_det
            t = np.einsum("kj,rkj->rk", e2, qvec) * inv_det
        valid = (~parallel
                 & (u >= -BARY_EPS) & (u <= 1.0 + BARY_EPS)
                 & (v >= -BARY_EPS) & (u + v <= 1.0 + BARY_EPS)
                 & (t > t_guards[lo:hi, None]) & np.isfinite(t))
        t = np.where(valid, t, np.inf)
        tmin = t.min(axis=1)
        hit_rows = np.nonzero(np.isfinite(tmin))[0]
        for r in hit_rows:
            window = t[r] <= tmin[r] * (1.0 + REL_TIE)
            tri = int(np.nonzero(window)[0][0])  # lowest index inside the tie window
            out_tri[lo + r] = tri
            out_t[lo + r] = t[r, tri]
            out_u[lo + r] = u[r, tri]
            out_v[lo + r] = v[r, tri]
    return out_tri, out_t, out_u, out_v


class AccelStructure:
    """Flat BVH bound to one scene; immutable and shareable."""

    def __init__(self, scene: Scene):
        self.scene = scene
        if scene.n_triangles:
            tri = scene.vertices[scene.tri_indices]
            (self.order, self.node_lo, self.node_hi, self.node_left,
             self.node_right, self.node_first, self.node_count) = _build_flat_bvh(
                scene.centroids, tri.min(axis=1), tri.max(axis=1))
        else:
            self.order = np.zeros(0, dtype=np.int64)

    def nearest_batch(self, origins: np.ndarray, dirs: np.ndarray, t_min):
        """Nearest hit per ray: (tri_id, t, u, v) with tri_id = -1 on miss."""
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        m = len(origins)
        guards = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (m,))
        guards = np.ascontiguousarray(guards)
        if self.scene.n_triangles == 0 or m == 0:
            return (np.full(m, -1, dtype=np.int64), np.full(m, np.inf),
                    np.zeros(m), np.zeros(m))
        if _traverse_batch_jit is not None:
            out_tri = np.empty(m, dtype=np.int64)
            out_t = np.empty(m)
            out_u = np.empty(m)
            out_v = np.empty(m)
            _traverse_batch_jit(
                origins, dirs, guards,
                self.node_lo, self.node_hi, self.node_left, self.node_right,
                self.node_first, self.node_count, self.order,
                self.scene.v0, self.scene.e1, self.scene.e2, self.scene.normals,
                out_tri, out_t, out_u, out_v)
            return out_tri, out_t, out_u, out_v
        return brute_nearest_batch(self.scene, origins, dirs, guards)

    def intersect(self, origin, direction, t_min: float) -> Hit | None:
        """Nearest hit with ``t > t_min`` along a single unit-direction ray."""
        origin = np.asarray(origin, dtype=np.float64)
        direction = np.asarray(direction, dtype=np.float64)
        norm = np.linalg.norm(direction)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"direction must be unit length, |d| = {norm}")
        if t_min < 0:
            raise ValueError("t_min must be >= 0")
        tri, t, u, v = self.nearest_batch(origin[None], direction[None], t_min)
        if tri[0] < 0:
            return None
        tri_id = int(tri[0])
        point = origin + t[0] * direction
        front = bool(np.dot(direction, self.scene.normals[tri_id]) < 0)
        return Hit(t=float(t[0]), point=point, triangle_id=tri_id,
                   barycentric=(float(u[0]), float(v[0])), front_facing=front)

    def segment_blocked(self, a, b, guard: float) -> bool:
        """True when any triangle cuts the open segment (a, b)."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        d = b - a
        length = float(np.linalg.norm(d))
        if length <= 2 * guard:
            return False
        tri, t, _, _ = self.nearest_batch(a[None], (d / length)[None], guard)
        return bool(tri[0] >= 0 and t[0] < length - guard)


def build_accel(scene: Scene) -> AccelStructure:
    """Build the query structure; an empty scene yields an always-miss one."""
    return AccelStructure(scene)
