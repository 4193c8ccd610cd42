"""Geometry kernels used by the clustering and 4D code paths."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import Pose, as_xyz, check_rotation

DEFAULT_VOXEL = 0.2

# neighbor search slack; exact distances are re-checked afterwards
_PAIR_SLACK = 1e-9


@dataclass(frozen=True)
class KernelMask:
    K: np.ndarray
    D: np.ndarray


def farthest_point_sampling(points, m: int, start: int = 0, rng=None) -> np.ndarray:
    """Greedy max-min-distance subset of ``min(m, N)`` indices.

    ``start`` is the first selected index. If ``rng`` is given the start
    index is drawn from it instead. Ties in the max-min distance go to the
    lowest index. When ``m >= N`` all indices are returned in order.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    X = as_xyz(points)
    n = len(X)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if m >= n:
        return np.arange(n, dtype=np.int64)
    if rng is not None:
        start = int(np.random.default_rng(rng).integers(n))
    if not 0 <= start < n:
        raise IndexError("start index out of range")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start
    mind = np.sum((X - X[start]) ** 2, axis=1)
    for k in range(1, m):
        nxt = int(np.argmax(mind))
        selected[k] = nxt
        np.minimum(mind, np.sum((X - X[nxt]) ** 2, axis=1), out=mind)
    return selected


def nearest_neighbor_assign(query, refs) -> np.ndarray:
    """Index of the Euclidean-nearest ref for every query row (ties -> lowest index)."""
    Q = as_xyz(query)
    R = as_xyz(refs)
    if len(R) == 0:
        raise ValueError("reference set is empty")
    if len(Q) == 0:
        return np.zeros(0, dtype=np.int64)
    if len(R) == 1:
        return np.zeros(len(Q), dtype=np.int64)
    tree = cKDTree(R)
    d, idx = tree.query(Q, k=2)
    out = idx[:, 0].astype(np.int64)
    # cKDTree's order among equidistant refs is unspecified; re-resolve those rows
    tied = np.flatnonzero(d[:, 1] <= d[:, 0] * (1 + 1e-12) + 1e-300)
    for q in tied:
        cand = tree.query_ball_point(Q[q], d[q, 0] * (1 + 1e-9) + 1e-12)
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        dist = np.sum((R[cand] - Q[q]) ** 2, axis=1)
        out[q] = cand[np.flatnonzero(dist == dist.min())[0]]
    return out


def pairwise_within(X, radius: float, sort: bool = True):
    """All ordered pairs ``(i, j, dist)`` with ``||X_i - X_j|| <= radius``.

    Includes the diagonal. Distances are recomputed exactly so that the
    inclusive threshold matches :func:`bandwidth_mask` bit for bit. With
    ``sort`` the pairs come ordered by ``(i, j)``.
    """
    X = as_xyz(X)
    if len(X) == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, np.zeros(0)
    n = len(X)
    pairs = cKDTree(X).query_pairs(radius * (1 + _PAIR_SLACK) + 1e-12, output_type="ndarray")
    a = pairs[:, 0].astype(np.int64)
    b = pairs[:, 1].astype(np.int64)
    d = np.sqrt(np.sum((X[a] - X[b]) ** 2, axis=1))
    keep = d <= radius
    a, b, d = a[keep], b[keep], d[keep]
    diag = np.arange(n, dtype=np.int64)
    i = np.concatenate([diag, a, b])
    j = np.concatenate([diag, b, a])
    d = np.concatenate([np.zeros(n), d, d])
    if not sort:
        return i, j, d
    order = np.lexsort((j, i))
    return i[order], j[order], d[order]


def distance_matrix(X) -> np.ndarray:
    X = as_xyz(X)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def bandwidth_mask(X, delta: float) -> KernelMask:
    """Dense flat-kernel mask ``K[i, j] = ||X_i - X_j|| <= delta`` and row sums."""
    if delta <= 0:
        raise ValueError("bandwidth must be positive")
    K = distance_matrix(X) <= delta
    return KernelMask(K, K.sum(axis=1).astype(np.int64))


def align_frame(points, pose_src: Pose, pose_ref: Pose) -> np.ndarray:
    """Express points of a frame with pose ``pose_src`` in the coordinates of ``pose_ref``.

    Row-vector convention: ``((P R_src^-1 + T_src) - T_ref) R_ref``.
    """
    for pose in (pose_src, pose_ref):
        check_rotation(pose.rotation)
    P = np.asarray(points, dtype=np.float64)
    xyz = P[:, :3] if P.ndim == 2 and P.shape[1] > 3 else P
    world = xyz @ np.linalg.inv(pose_src.rotation) + pose_src.translation
    out = (world - pose_ref.translation) @ pose_ref.rotation
    if xyz is not P:
        out = np.hstack([out, P[:, 3:]])
    return out


def tight_box_center(points) -> np.ndarray:
    """Midpoint of the axis-aligned bounding box."""
    X = as_xyz(points)
    if len(X) == 0:
        raise ValueError("cannot take the box center of an empty point set")
    return (X.min(axis=0) + X.max(axis=0)) / 2.0


def box_centers_by_id(points, ids) -> dict:
    """Tight-box center for every nonzero id."""
    X = as_xyz(points)
    ids = np.asarray(ids)
    out = {}
    for k in np.unique(ids):
        if k == 0:
            continue
        out[int(k)] = tight_box_center(X[ids == k])
    return out


def density_profile(
    frames: Sequence,
    centers: Sequence,
    range_bins: Sequence[float],
    voxel: float = DEFAULT_VOXEL,
    sensor_origin=(0.0, 0.0, 0.0),
) -> list:
    """Mean number of regressed centers per occupied voxel, per sensor-range bin.

    ``frames`` carry per-point ``instance`` ids; ``centers[k]`` holds the
    regressed center of every point of ``frames[k]`` (rows of non-instance
    points are ignored). Each instance contributes one value (its mean count
    per occupied voxel), binned by the range of its tight-box center. Bins
    with no instances are ``None``.
    """
    if voxel <= 0:
        raise ValueError("voxel edge must be positive")
    edges = np.asarray(range_bins, dtype=np.float64)
    sums = np.zeros(len(edges) - 1)
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    origin = np.asarray(sensor_origin, dtype=np.float64)
    for frame, C in zip(frames, centers):
        C = as_xyz(C)
        ins = np.asarray(frame.instance)
        for k in np.unique(ins[ins != 0]):
            sel = ins == k
            rng_m = np.linalg.norm(tight_box_center(frame.points[sel, :3]) - origin)
            b = np.searchsorted(edges, rng_m, side="right") - 1
            if b < 0 or b >= len(sums):
                continue
            cells = np.floor(C[sel] / voxel).astype(np.int64)
            _, per_cell = np.unique(cells, axis=0, return_counts=True)
            sums[b] += per_cell.mean()
            counts[b] += 1
    return [float(s / c) if c else None for s, c in zip(sums, counts)]
