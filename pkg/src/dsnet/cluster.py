"""Heuristic clustering baselines: BFS radius grouping, DBSCAN, flat-kernel mean shift."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .core import as_xyz, relabel_contiguous
from .geom import farthest_point_sampling, nearest_neighbor_assign, pairwise_within


@dataclass
class ClusterResult:
    """Per-point ids (0 = noise) and the position of every cluster's mode."""

    ids: np.ndarray
    modes: dict = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return len(self.modes)

    @classmethod
    def empty(cls) -> "ClusterResult":
        return cls(np.zeros(0, dtype=np.int64), {})


def _result_from_ids(X: np.ndarray, ids: np.ndarray) -> ClusterResult:
    ids = relabel_contiguous(ids)
    modes = {}
    for k in range(1, int(ids.max(initial=0)) + 1):
        modes[k] = X[ids == k].mean(axis=0)
    return ClusterResult(ids, modes)


def bfs_cluster(points, radius: float, min_pts: int = 50) -> ClusterResult:
    """Connected components of the ``radius`` graph; small components become noise."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    X = as_xyz(points)
    n = len(X)
    if n == 0:
        return ClusterResult.empty()
    i, j, _ = pairwise_within(X, radius)
    graph = sparse.coo_matrix((np.ones(len(i), dtype=np.int8), (i, j)), shape=(n, n)).tocsr()
    _, comp = connected_components(graph, directed=False)
    sizes = np.bincount(comp)
    ids = comp + 1
    ids[sizes[comp] < min_pts] = 0
    return _result_from_ids(X, ids)


def dbscan(points, eps: float, min_pts: int) -> ClusterResult:
    """Density-based clustering.

    A point is core when its closed ``eps`` ball holds at least ``min_pts``
    points (itself included). Clusters grow from cores in index order;
    border points keep the first cluster that reaches them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    X = as_xyz(points)
    n = len(X)
    if n == 0:
        return ClusterResult.empty()
    i, j, _ = pairwise_within(X, eps)
    starts = np.searchsorted(i, np.arange(n + 1))
    degree = np.diff(starts)
    core = degree >= min_pts
    ids = np.zeros(n, dtype=np.int64)
    current = 0
    for p in range(n):
        if ids[p] or not core[p]:
            continue
        current += 1
        ids[p] = current
        queue = deque([p])
        while queue:
            q = queue.popleft()
            if not core[q]:
                continue
            for r in j[starts[q]:starts[q + 1]]:
                if ids[r] == 0:
                    ids[r] = current
                    if core[r]:
                        queue.append(r)
    return _result_from_ids(X, ids)


class FlatKernel:
    """Row-normalized flat-kernel operator ``D^-1 K`` stored as neighbor pairs.

    Supports ``A @ X`` and ``A.T @ G`` without building a sparse matrix.
    """

    def __init__(self, rows, cols, vals, n, transposed=False):
        self.rows, self.cols, self.vals, self.n = rows, cols, vals, n
        self.transposed = transposed

    @property
    def T(self) -> "FlatKernel":
        return FlatKernel(self.rows, self.cols, self.vals, self.n, not self.transposed)

    def __matmul__(self, X):
        X = np.asarray(X, dtype=np.float64)
        src, dst = (self.rows, self.cols) if self.transposed else (self.cols, self.rows)
        vec = X.ndim == 1
        X2 = X[:, None] if vec else X
        out = np.empty((self.n, X2.shape[1]))
        for k in range(X2.shape[1]):
            out[:, k] = np.bincount(dst, self.vals * X2[src, k], minlength=self.n)
        return out[:, 0] if vec else out

    def toarray(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        np.add.at(A, (self.rows, self.cols), self.vals)
        return A.T if self.transposed else A


def kernel_operators(X, deltas: Sequence[float], weights=None) -> list:
    """Row-normalized flat-kernel operators ``D_j^-1 K_j``, one per bandwidth.

    ``weights`` gives every row a multiplicity, so a set of unique rows with
    counts yields the same neighborhood means as the expanded set.
    """
    X = as_xyz(X)
    n = len(X)
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas):
        raise ValueError("bandwidths must be positive")
    i, j, d = pairwise_within(X, max(deltas), sort=False)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    ops = []
    for delta in deltas:
        keep = d <= delta
        ii, jj = i[keep], j[keep]
        wj = w[jj]
        deg = np.bincount(ii, weights=wj, minlength=n)
        ops.append(FlatKernel(ii, jj, wj / deg[ii], n))
    return ops


def flat_kernel_step(X, delta: float) -> np.ndarray:
    """Replace every row by the mean of the rows within ``delta`` (inclusive)."""
    X = as_xyz(X)
    if delta <= 0:
        raise ValueError("bandwidth must be positive")
    if len(X) == 0:
        return X.copy()
    (A,) = kernel_operators(X, [delta])
    return A @ X


def merge_modes(Y: np.ndarray, merge_radius: float):
    """Greedy sequential merge of converged positions.

    Each row joins the first existing mode within ``merge_radius`` (modes are
    compared at their founding position) or founds a new one. Returns ids
    starting at 1 in first-appearance order and mode positions (member means).
    """
    n = len(Y)
    ids = np.zeros(n, dtype=np.int64)
    if n == 0:
        return ids, {}
    # collapse exact duplicates first; blurring leaves many
    uniq, inverse = np.unique(Y, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    first = np.full(len(uniq), n, dtype=np.int64)
    np.minimum.at(first, inverse, np.arange(n))
    order = np.argsort(first, kind="stable")
    founders = []
    uid = np.zeros(len(uniq), dtype=np.int64)
    tree_pts = []
    for u in order:
        y = uniq[u]
        hit = 0
        if founders:
            dist = np.linalg.norm(np.asarray(tree_pts) - y, axis=1)
            close = np.flatnonzero(dist <= merge_radius)
            if len(close):
                hit = int(close[0]) + 1
        if not hit:
            founders.append(u)
            tree_pts.append(y)
            hit = len(founders)
        uid[u] = hit
    ids = uid[inverse]
    modes = {k: Y[ids == k].mean(axis=0) for k in range(1, len(founders) + 1)}
    return ids, modes


def _collapse(U: np.ndarray, counts: np.ndarray):
    V, inv = np.unique(U, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    return V, inv, np.bincount(inv, weights=counts).astype(np.float64)


def mean_shift(
    points,
    bandwidth: float = 1.2,
    max_iters: int = 100,
    converge_tol: float = 1e-3,
    merge_radius: Optional[float] = None,
    n_seeds: Optional[int] = None,
) -> ClusterResult:
    """Flat-kernel (blurring) mean shift.

    The whole seed set is moved with :func:`flat_kernel_step` until the
    largest displacement drops below ``converge_tol``. Converged seeds are
    merged within ``merge_radius`` (default ``bandwidth / 2``). With
    ``n_seeds`` the seeds are an FPS subsample and every point takes the id
    of its nearest seed.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    X = as_xyz(points)
    if len(X) == 0:
        return ClusterResult.empty()
    if merge_radius is None:
        merge_radius = bandwidth / 2.0
    seeds = np.arange(len(X))
    if n_seeds is not None and n_seeds < len(X):
        seeds = farthest_point_sampling(X, n_seeds)
    # coincident rows share a neighborhood, so iterate on unique rows with multiplicities
    U, inverse, counts = np.unique(X[seeds], axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    for _ in range(max_iters):
        (A,) = kernel_operators(U, [bandwidth], counts)
        U_next = A @ U
        shift = np.max(np.linalg.norm(U_next - U, axis=1))
        U, inv2, counts = _collapse(U_next, counts)
        inverse = inv2[inverse]
        if shift < converge_tol:
            break
    Y = U[inverse]
    seed_ids, modes = merge_modes(Y, merge_radius)
    if len(seeds) == len(X):
        return ClusterResult(seed_ids, modes)
    nn = nearest_neighbor_assign(X, X[seeds])
    return ClusterResult(seed_ids[nn], modes)


def heuristic_cluster(points, spec: dict) -> ClusterResult:
    """Dispatch on ``spec["algorithm"]`` (``meanshift``, ``bfs``, ``dbscan``)."""
    params = dict(spec)
    algo = params.pop("algorithm", "meanshift").lower().replace("_", "").replace("-", "")
    if algo == "meanshift":
        return mean_shift(points, **params)
    if algo == "bfs":
        params.setdefault("min_pts", 1)
        return bfs_cluster(points, **params)
    if algo == "dbscan":
        return dbscan(points, **params)
    raise ValueError(f"unknown clustering algorithm {spec.get('algorithm')!r}")
