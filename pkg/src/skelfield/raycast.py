"""Batched any-hit ray/mesh intersection.

Bounding volume hierarchy over triangles, median-split on the widest centroid
axis, traversed breadth-first on whole arrays of (ray, node) pairs so large
ray batches stay vectorized. Only boolean any-hit queries are exposed; that
is all visibility and silhouette tests need.
"""

from __future__ import annotations

import numpy as np


def _moller_trumbore_any(orig, dirn, v0, e1, e2, t_lo, t_hi):
    """Elementwise ray/triangle predicate.

    All arguments are (M, 3) or (M,), one candidate pair per row. Returns a
    (M,) bool mask of pairs whose intersection parameter lies in [t_lo, t_hi].
    """
    pvec = np.cross(dirn, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, det, 1.0)
    inv = 1.0 / inv
    tvec = orig - v0
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    ok &= (u >= 0.0) & (u <= 1.0)
    qvec = np.cross(tvec, e1)
    v = np.einsum("ij,ij->i", dirn, qvec) * inv
    ok &= (v >= 0.0) & (u + v <= 1.0)
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    return ok & (t >= t_lo) & (t <= t_hi)


class TriangleRaycaster:
    """Immutable BVH over one triangle soup."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, leaf_size: int = 8):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        if faces.size == 0:
            raise ValueError("raycaster needs at least one triangle")
        tri = vertices[faces]  # (F, 3, 3)
        self._v0 = np.ascontiguousarray(tri[:, 0])
        self._e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
        self._e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])

        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        pad = 1e-7 * max(float((hi.max(0) - lo.min(0)).max()), 1e-30) + 1e-12
        centroids = tri.mean(axis=1)

        order = np.arange(faces.shape[0])
        bmin, bmax, left, right, start, count = [], [], [], [], [], []

        def build(beg, end):
            node = len(bmin)
            ids = order[beg:end]
            bmin.append(lo[ids].min(axis=0) - pad)
            bmax.append(hi[ids].max(axis=0) + pad)
            left.append(-1)
            right.append(-1)
            if end - beg <= leaf_size:
                start.append(beg)
                count.append(end - beg)
                return node
            start.append(0)
            count.append(0)
            axis = int(np.argmax(bmax[node] - bmin[node]))
            mid = (beg + end) // 2
            # argsort is stable, so equal centroids split deterministically
            order[beg:end] = ids[np.argsort(centroids[ids, axis], kind="stable")]
            left[node] = build(beg, mid)
            right[node] = build(mid, end)
            return node

        build(0, faces.shape[0])
        self._order = order
        self._bmin = np.asarray(bmin)
        self._bmax = np.asarray(bmax)
        self._left = np.asarray(left)
        self._right = np.asarray(right)
        self._start = np.asarray(start)
        self._count = np.asarray(count)

    @property
    def triangle_count(self) -> int:
        return self._v0.shape[0]

    def any_hit(self, origins, directions, t_min, t_max) -> np.ndarray:
        """True per ray iff some triangle intersects within [t_min, t_max].

        Args:
            origins, directions: (M, 3); directions need not be normalized
                but must be nonzero (t is in units of the direction length).
            t_min, t_max: scalars or (M,) parameter bounds, inclusive.
        """
        origins = np.asarray(origins, dtype=np.float64)
        directions = np.asarray(directions, dtype=np.float64)
        m = origins.shape[0]
        t_min = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (m,))
        t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (m,))

        hit = np.zeros(m, dtype=bool)
        if m == 0:
            return hit
        with np.errstate(divide="ignore"):
            inv_d = np.where(directions == 0.0, np.inf, 1.0 / directions)

        rays = np.arange(m)
        nodes = np.zeros(m, dtype=np.int64)
        while rays.size:
            live = ~hit[rays]
            rays, nodes = rays[live], nodes[live]
            if not rays.size:
                break

            # slab test; fmin/fmax drop the NaNs from 0 * inf, which only
            # loosens the test (never prunes a real hit)
            o, inv = origins[rays], inv_d[rays]
            t1 = (self._bmin[nodes] - o) * inv
            t2 = (self._bmax[nodes] - o) * inv
            near = np.fmax(np.fmax.reduce(np.fmin(t1, t2), axis=1), t_min[rays])
            far = np.fmin(np.fmin.reduce(np.fmax(t1, t2), axis=1), t_max[rays])
            overlap = near <= far
            rays, nodes = rays[overlap], nodes[overlap]
            if not rays.size:
                break

            is_leaf = self._count[nodes] > 0
            if np.any(is_leaf):
                lrays, lnodes = rays[is_leaf], nodes[is_leaf]
                counts = self._count[lnodes]
                total = int(counts.sum())
                rep = np.repeat(np.arange(lrays.size), counts)
                within = np.arange(total) - np.repeat(
                    np.concatenate([[0], np.cumsum(counts)[:-1]]), counts
                )
                tri = self._order[self._start[lnodes][rep] + within]
                ray_of_pair = lrays[rep]
                found = _moller_trumbore_any(
                    origins[ray_of_pair],
                    directions[ray_of_pair],
                    self._v0[tri],
                    self._e1[tri],
                    self._e2[tri],
                    t_min[ray_of_pair],
                    t_max[ray_of_pair],
                )
                hit[ray_of_pair[found]] = True

            inner = ~is_leaf
            irays, inodes = rays[inner], nodes[inner]
            rays = np.concatenate([irays, irays])
            nodes = np.concatenate([self._left[inodes], self._right[inodes]])
        return hit
