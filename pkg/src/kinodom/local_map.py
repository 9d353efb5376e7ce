"""Sparse voxel-hash local map with bounded per-voxel capacity."""

from __future__ import annotations

import numba
import numpy as np

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel coordinates ``floor(p / voxel_size)``, shape ``(N, 3)``."""
    return np.floor(np.asarray(points, dtype=float) / voxel_size).astype(np.int64)


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack ``(N, 3)`` voxel coordinates into one int64 per voxel.

    Each axis gets 21 bits, enough for about a million voxels either side of
    the origin. Larger coordinates raise instead of colliding silently.
    """
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    shifted = keys + _KEY_OFFSET
    if shifted.size and (shifted.min() < 0 or shifted.max() > _KEY_MASK):
        raise ValueError("voxel coordinates exceed the packable range")
    return (shifted[:, 0] << (2 * _KEY_BITS)) | (shifted[:, 1] << _KEY_BITS) | shifted[:, 2]


def first_index_per_group(labels: np.ndarray) -> np.ndarray:
    """Indices of the first occurrence of each label, in input order."""
    _, first = np.unique(labels, return_index=True)
    return np.sort(first)


def rank_within_group(labels: np.ndarray) -> np.ndarray:
    """0-based arrival rank of every element among equal labels."""
    n = len(labels)
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.ones(n, dtype=bool)
    starts[1:] = sorted_labels[1:] != sorted_labels[:-1]
    group_start = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n) - group_start
    return ranks


class VoxelLocalMap:
    """Map points bucketed by voxel, at most ``max_points_per_voxel`` each.

    Points live in flat arrays sorted by packed voxel label, in arrival
    order within each voxel. The KD-tree used for queries is rebuilt lazily
    after each mutation.
    """

    def __init__(
        self,
        voxel_size: float = 1.0,
        max_points_per_voxel: int = 20,
        max_range: float = 100.0,
    ) -> None:
        if voxel_size <= 0 or max_range <= 0 or max_points_per_voxel < 1:
            raise ValueError("voxel_size, max_range and max_points_per_voxel must be positive")
        self.voxel_size = float(voxel_size)
        self.max_points_per_voxel = int(max_points_per_voxel)
        self.max_range = float(max_range)
        self.skipped_nonfinite = 0
        self._points = np.empty((0, 3))
        self._keys = np.empty((0, 3), dtype=np.int64)
        self._labels = np.empty(0, dtype=np.int64)
        self._runs: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._points)

    def is_empty(self) -> bool:
        return len(self._points) == 0

    def point_count(self) -> int:
        return len(self._points)

    def all_points(self) -> np.ndarray:
        return self._points.copy()

    def cells(self) -> dict[tuple[int, int, int], np.ndarray]:
        """Voxel key to stored points, for inspection and tests."""
        out: dict[tuple[int, int, int], list] = {}
        for key, p in zip(map(tuple, self._keys.tolist()), self._points):
            out.setdefault(key, []).append(p)
        return {k: np.array(v) for k, v in out.items()}

    def clear(self) -> None:
        self._points = np.empty((0, 3))
        self._keys = np.empty((0, 3), dtype=np.int64)
        self._labels = np.empty(0, dtype=np.int64)
        self._runs = None

    def add_points(self, points: np.ndarray, origin=None) -> VoxelLocalMap:
        """Insert odometry-frame points, then crop around ``origin``.

        Full voxels reject newcomers. Non-finite points are skipped and
        counted in :attr:`skipped_nonfinite`.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        finite = np.isfinite(points).all(axis=1)
        self.skipped_nonfinite += int((~finite).sum())
        points = points[finite]
        if len(points):
            keys = voxel_keys(points, self.voxel_size)
            labels = pack_keys(keys)
            stored = np.searchsorted(self._labels, labels, side="right") - np.searchsorted(
                self._labels, labels, side="left"
            )
            keep = stored + rank_within_group(labels) < self.max_points_per_voxel
            if keep.any():
                order = np.argsort(labels[keep], kind="stable")
                new_labels = labels[keep][order]
                # Stable merge: stored points precede newcomers of the same voxel.
                at = np.searchsorted(self._labels, new_labels, side="right")
                self._labels = np.insert(self._labels, at, new_labels)
                self._points = np.insert(self._points, at, points[keep][order], axis=0)
                self._keys = np.insert(self._keys, at, keys[keep][order], axis=0)
                self._runs = None
        if origin is not None:
            self.remove_far_points(origin)
        return self

    def remove_far_points(self, center) -> None:
        """Drop every stored point farther than ``max_range`` from ``center``."""
        if self.is_empty():
            return
        center = np.asarray(center, dtype=float)
        d2 = np.sum((self._points - center) ** 2, axis=1)
        keep = d2 <= self.max_range**2
        if not keep.all():
            self._points = self._points[keep]
            self._keys = self._keys[keep]
            self._labels = self._labels[keep]
            self._runs = None

    def _index(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique voxel labels and the offsets of their runs in the flat arrays."""
        if self._runs is None:
            starts = np.flatnonzero(np.r_[True, self._labels[1:] != self._labels[:-1]])
            self._runs = (self._labels[starts], np.append(starts, len(self._labels)))
        return self._runs

    def nearest_neighbors(
        self, queries: np.ndarray, max_distance: float
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched lookup over the 27 voxels around each query.

        Returns ``(found, points, distances)``; rows with ``found == False``
        hold NaN points and infinite distances.
        """
        if max_distance <= 0:
            raise ValueError("max_distance must be positive")
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        n = len(queries)
        points = np.full((n, 3), np.nan)
        dists = np.full(n, np.inf)
        if self.is_empty() or n == 0:
            return np.zeros(n, dtype=bool), points, dists
        if not np.all(np.isfinite(queries)):
            raise ValueError("queries must be finite")
        unique, offsets = self._index()
        idx, d = _nearest_in_voxels(
            self._points, unique, offsets, queries, float(self.voxel_size), float(max_distance)
        )
        found = idx >= 0
        points[found] = self._points[idx[found]]
        dists[found] = d[found]
        return found, points, dists

    def nearest_neighbor(self, query, max_distance: float):
        """Closest stored point to ``query`` as ``(point, distance)``, or None."""
        found, points, dists = self.nearest_neighbors(np.asarray(query)[None, :], max_distance)
        if not found[0]:
            return None
        return points[0], float(dists[0])


@numba.njit(cache=True)
def _scan_voxel(points, unique, offsets, q, kx, ky, kz, best, best_j):
    sx = kx + _KEY_OFFSET
    sy = ky + _KEY_OFFSET
    sz = kz + _KEY_OFFSET
    if min(sx, sy, sz) < 0 or max(sx, sy, sz) > _KEY_MASK:
        return best, best_j
    label = (sx << (2 * _KEY_BITS)) | (sy << _KEY_BITS) | sz
    pos = np.searchsorted(unique, label)
    if pos >= unique.shape[0] or unique[pos] != label:
        return best, best_j
    for j in range(offsets[pos], offsets[pos + 1]):
        dx = points[j, 0] - q[0]
        dy = points[j, 1] - q[1]
        dz = points[j, 2] - q[2]
        d2 = dx * dx + dy * dy + dz * dz
        if d2 < best or (d2 == best and (best_j < 0 or j < best_j)):
            best = d2
            best_j = j
    return best, best_j


@numba.njit(cache=True)
def _nearest_in_voxels(points, unique, offsets, queries, voxel, radius):
    n = queries.shape[0]
    best_idx = np.full(n, -1, dtype=np.int64)
    best_d = np.full(n, np.inf)
    r2 = radius * radius
    lo = np.empty(3, dtype=np.int64)
    hi = np.empty(3, dtype=np.int64)
    c = np.empty(3, dtype=np.int64)
    for i in range(n):
        q = queries[i]
        for a in range(3):
            c[a] = np.int64(np.floor(q[a] / voxel))
            # Pad the search box slightly against rounding in the bounds.
            x0 = (q[a] - radius) / voxel
            x1 = (q[a] + radius) / voxel
            lo[a] = max(c[a] - 1, np.int64(np.floor(x0 - 1e-9 * (1.0 + abs(x0)))))
            hi[a] = min(c[a] + 1, np.int64(np.floor(x1 + 1e-9 * (1.0 + abs(x1)))))
        # Own voxel first so the running best prunes the neighbours.
        best, j = _scan_voxel(points, unique, offsets, q, c[0], c[1], c[2], r2, -1)
        for kx in range(lo[0], hi[0] + 1):
            gx = max(0.0, kx * voxel - q[0], q[0] - (kx + 1) * voxel)
            for ky in range(lo[1], hi[1] + 1):
                gy = max(0.0, ky * voxel - q[1], q[1] - (ky + 1) * voxel)
                for kz in range(lo[2], hi[2] + 1):
                    if kx == c[0] and ky == c[1] and kz == c[2]:
                        continue
                    gz = max(0.0, kz * voxel - q[2], q[2] - (kz + 1) * voxel)
                    # Slightly shrunk gap so rounding never prunes a valid voxel.
                    if (gx * gx + gy * gy + gz * gz) * (1.0 - 1e-9) > best:
                        continue
                    best, j = _scan_voxel(points, unique, offsets, q, kx, ky, kz, best, j)
        if j >= 0:
            best_idx[i] = j
            best_d[i] = np.sqrt(best)
    return best_idx, best_d
