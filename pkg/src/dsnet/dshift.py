"""Dynamic shifting: learnable multi-bandwidth flat-kernel clustering.

Each iteration moves the seeding points to a per-point softmax-weighted
combination of flat-kernel targets at several candidate bandwidths. The
weights come from a small per-iteration MLP on point features. Gradients of
the L1 center loss are derived by hand; kernel masks are treated as
constants of the forward pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cluster import ClusterResult, heuristic_cluster, kernel_operators
from .core import as_xyz
from .geom import farthest_point_sampling, nearest_neighbor_assign, tight_box_center
from .io import atomic_write_bytes

DEFAULT_CANDIDATES = (0.2, 1.7, 3.2)
HEAD_MAGIC = b"DSWH"
HEAD_VERSION = 1


@dataclass
class DSConfig:
    candidates: tuple = DEFAULT_CANDIDATES
    iterations: int = 4
    eta: float = 1.0
    fps_count: int = 10000
    final_cluster: dict = field(default_factory=lambda: {"algorithm": "meanshift", "bandwidth": 0.65})
    loss_weights: Optional[tuple] = None
    backprop_through_iterations: bool = True

    def __post_init__(self):
        self.candidates = tuple(float(c) for c in self.candidates)
        if len(self.candidates) < 1 or any(c <= 0 for c in self.candidates):
            raise ValueError("need at least one positive bandwidth candidate")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.fps_count < 1:
            raise ValueError("fps_count must be >= 1")
        if self.loss_weights is None:
            self.loss_weights = (1.0,) * self.iterations
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if len(self.loss_weights) != self.iterations:
            raise ValueError("one loss weight per iteration is required")

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)


class WeightHead:
    """Per-iteration MLP ``features -> softmax weights over candidates``.

    With ``hidden > 0`` each iteration is ``tanh(F A1 + b1) A2 + b2``;
    with ``hidden == 0`` it is the affine map ``F A + b``.
    """

    def __init__(self, params: list, hidden: int, feature_mean=None, feature_scale=None):
        self.params = [[np.asarray(p, dtype=np.float64) for p in layer] for layer in params]
        self.hidden = int(hidden)
        d = self.in_dim
        self.feature_mean = np.zeros(d) if feature_mean is None else np.asarray(feature_mean, dtype=np.float64).copy()
        self.feature_scale = np.ones(d) if feature_scale is None else np.asarray(feature_scale, dtype=np.float64).copy()
        for p in self.flat_views():
            if not np.all(np.isfinite(p)):
                raise ValueError("non-finite head parameter")

    @classmethod
    def init(cls, iterations: int, in_dim: int, n_candidates: int, hidden: int = 32, seed: int = 0, scale: float = 1.0):
        rng = np.random.default_rng(seed)
        params = []
        for _ in range(iterations):
            if hidden:
                A1 = rng.normal(0.0, scale / np.sqrt(in_dim), (in_dim, hidden))
                A2 = rng.normal(0.0, scale / np.sqrt(hidden), (hidden, n_candidates))
                params.append([A1, np.zeros(hidden), A2, np.zeros(n_candidates)])
            else:
                A = rng.normal(0.0, scale / np.sqrt(in_dim), (in_dim, n_candidates))
                params.append([A, np.zeros(n_candidates)])
        return cls(params, hidden)

    @classmethod
    def zeros(cls, iterations: int, in_dim: int, n_candidates: int, hidden: int = 32):
        head = cls.init(iterations, in_dim, n_candidates, hidden)
        for p in head.flat_views():
            p[...] = 0.0
        return head

    @property
    def iterations(self) -> int:
        return len(self.params)

    @property
    def in_dim(self) -> int:
        return self.params[0][0].shape[0] if self.params else 0

    @property
    def n_candidates(self) -> int:
        return self.params[0][-1].shape[0] if self.params else 0

    def flat_views(self) -> list:
        return [p for layer in self.params for p in layer]

    def copy(self) -> "WeightHead":
        return WeightHead([[p.copy() for p in layer] for layer in self.params], self.hidden,
                          self.feature_mean, self.feature_scale)

    def fit_normalization(self, F: np.ndarray) -> "WeightHead":
        """Standardize inputs with the column statistics of ``F``."""
        F = np.asarray(F, dtype=np.float64)
        self.feature_mean = F.mean(axis=0)
        std = F.std(axis=0)
        self.feature_scale = np.where(std > 1e-12, std, 1.0)
        return self

    def normalize(self, F: np.ndarray) -> np.ndarray:
        return (F - self.feature_mean) / self.feature_scale

    def get_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.flat_views()])

    def set_vector(self, vec: np.ndarray) -> None:
        k = 0
        for p in self.flat_views():
            p[...] = vec[k:k + p.size].reshape(p.shape)
            k += p.size

    def logits(self, F: np.ndarray, i: int, cache: Optional[dict] = None) -> np.ndarray:
        F = self.normalize(F)
        layer = self.params[i]
        if self.hidden:
            A1, b1, A2, b2 = layer
            H = np.tanh(F @ A1 + b1)
            if cache is not None:
                cache["H"] = H
            return H @ A2 + b2
        A, b = layer
        return F @ A + b

    def backward(self, F: np.ndarray, i: int, dZ: np.ndarray, cache: dict) -> list:
        F = self.normalize(F)
        if self.hidden:
            _, _, A2, _ = self.params[i]
            H = cache["H"]
            dA2 = H.T @ dZ
            db2 = dZ.sum(axis=0)
            dpre = (dZ @ A2.T) * (1.0 - H * H)
            return [F.T @ dpre, dpre.sum(axis=0), dA2, db2]
        return [F.T @ dZ, dZ.sum(axis=0)]

    def save(self, path, candidates: Sequence[float]) -> None:
        """Versioned little-endian binary; layout documented in the README."""
        cand = np.asarray(candidates, dtype="<f8")
        if len(cand) != self.n_candidates:
            raise ValueError("candidate count does not match the head")
        parts = [
            HEAD_MAGIC,
            struct.pack("<5I", HEAD_VERSION, self.iterations, self.in_dim, self.hidden, self.n_candidates),
            cand.tobytes(),
            np.asarray(self.feature_mean, dtype="<f8").tobytes(),
            np.asarray(self.feature_scale, dtype="<f8").tobytes(),
        ]
        parts += [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in self.flat_views()]
        atomic_write_bytes(path, b"".join(parts))

    @classmethod
    def load(cls, path):
        """Returns ``(head, candidates)``."""
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != HEAD_MAGIC:
            raise ValueError("not a weight-head file (bad magic)")
        version, iters, in_dim, hidden, l = struct.unpack_from("<5I", blob, 4)
        if version != HEAD_VERSION:
            raise ValueError(f"unsupported weight-head version {version}")
        off = 4 + 20
        cand = np.frombuffer(blob, dtype="<f8", count=l, offset=off)
        off += 8 * l
        mean = np.frombuffer(blob, dtype="<f8", count=in_dim, offset=off).astype(np.float64)
        off += 8 * in_dim
        scale = np.frombuffer(blob, dtype="<f8", count=in_dim, offset=off).astype(np.float64)
        off += 8 * in_dim
        shapes = [(in_dim, hidden), (hidden,), (hidden, l), (l,)] if hidden else [(in_dim, l), (l,)]
        params = []
        for _ in range(iters):
            layer = []
            for shape in shapes:
                n = int(np.prod(shape))
                layer.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
                off += 8 * n
            params.append(layer)
        if off != len(blob):
            raise ValueError("weight-head file has trailing or missing bytes")
        return cls(params, hidden, mean, scale), tuple(float(c) for c in cand)


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def weight_head_forward(F, i: int, head: WeightHead) -> np.ndarray:
    """Candidate weights ``W_i`` (rows on the simplex) for iteration ``i``."""
    F = np.asarray(F, dtype=np.float64)
    if not 0 <= i < head.iterations:
        raise IndexError("iteration index out of range")
    if F.ndim != 2 or F.shape[1] != head.in_dim:
        raise ValueError(f"features must be (M, {head.in_dim})")
    return softmax(head.logits(F, i))


def ds_iteration(X, W, candidates: Sequence[float], eta: float = 1.0, ops=None) -> np.ndarray:
    """One dynamic shifting update ``X + eta * (sum_j W_j * D_j^-1 K_j X - X)``."""
    X = as_xyz(X)
    W = np.asarray(W, dtype=np.float64)
    if ops is None:
        ops = kernel_operators(X, candidates)
    target = np.zeros_like(X)
    for j, A in enumerate(ops):
        target += W[:, j:j + 1] * (A @ X)
    return X + eta * (target - X)


def effective_bandwidth(W, candidates: Sequence[float]) -> np.ndarray:
    """Per-seed bandwidth implied by the candidate weights."""
    return np.asarray(W, dtype=np.float64) @ np.asarray(candidates, dtype=np.float64)


def center_offset_target(points, instances) -> np.ndarray:
    """Offsets from every things point to its instance's tight-box center."""
    P = as_xyz(points)
    ids = np.asarray(instances)
    if np.any(ids == 0):
        raise ValueError("every things point needs a nonzero instance id")
    out = np.empty_like(P)
    for k in np.unique(ids):
        sel = ids == k
        out[sel] = tight_box_center(P[sel]) - P[sel]
    return out


def ds_loss(trajectory: Sequence[np.ndarray], gt_centers, weights: Sequence[float]) -> float:
    """Weighted sum over iterations of the mean per-seed L1 distance to the targets."""
    C = as_xyz(gt_centers)
    if len(trajectory) != len(weights):
        raise ValueError("one weight per trajectory entry is required")
    total = 0.0
    for X, w in zip(trajectory, weights):
        X = as_xyz(X)
        if X.shape != C.shape:
            raise ValueError("trajectory and target shapes differ")
        total += w * np.abs(X - C).sum() / len(C)
    return float(total)


@dataclass
class DSTrace:
    seeds: np.ndarray
    trajectory: list
    weights: list
    result: Optional[ClusterResult] = None


def _shift(X0, F, cfg: DSConfig, head: WeightHead, frozen_ops=None, keep=False):
    """Run the iteration recurrence; returns trajectory, weights and backward caches."""
    X = X0
    traj, Ws, caches = [], [], []
    for i in range(cfg.iterations):
        cache = {}
        W = softmax(head.logits(F, i, cache))
        ops = frozen_ops[i] if frozen_ops is not None else kernel_operators(X, cfg.candidates)
        if keep:
            cache["ops"] = ops
            cache["Y"] = [A @ X for A in ops]
            X_next = X + cfg.eta * (sum(W[:, j:j + 1] * Y for j, Y in enumerate(cache["Y"])) - X)
            cache["W"] = W
            caches.append(cache)
        else:
            X_next = ds_iteration(X, W, cfg.candidates, cfg.eta, ops)
        X = X_next
        traj.append(X)
        Ws.append(W)
    return traj, Ws, caches


def ds_forward(points, features, centers, cfg: DSConfig, head: WeightHead, trace: bool = False):
    """Cluster things points from their regressed centers.

    FPS picks up to ``cfg.fps_count`` seeds, the seeds are shifted for
    ``cfg.iterations`` rounds, the converged seeds are grouped with the
    heuristic ``cfg.final_cluster``, and every point inherits the id of its
    nearest seed (nearest in point space).
    """
    P = as_xyz(points)
    if len(P) == 0:
        res = ClusterResult.empty()
        return (res, DSTrace(np.zeros(0, dtype=np.int64), [], [], res)) if trace else res
    F = np.asarray(features, dtype=np.float64)
    C = as_xyz(centers)
    if not (len(F) == len(C) == len(P)):
        raise ValueError("points, features and centers must have equal length")
    seeds = farthest_point_sampling(P, cfg.fps_count)
    traj, Ws, _ = _shift(C[seeds], F[seeds], cfg, head)
    X = traj[-1] if traj else C[seeds]
    seed_res = heuristic_cluster(X, cfg.final_cluster)
    if len(seeds) == len(P):
        res = seed_res
    else:
        res = ClusterResult(seed_res.ids[nearest_neighbor_assign(P, P[seeds])], seed_res.modes)
    if trace:
        return res, DSTrace(seeds, traj, Ws, res)
    return res


@dataclass
class DSSample:
    """One training scene: things points, features, regressed centers, box-center targets."""

    points: np.ndarray
    features: np.ndarray
    centers: np.ndarray
    gt_centers: np.ndarray
    _seed_cache: dict = field(default_factory=dict, repr=False)

    def seeds(self, m: int) -> np.ndarray:
        if m not in self._seed_cache:
            self._seed_cache[m] = farthest_point_sampling(self.points, m)
        return self._seed_cache[m]


def ds_loss_and_grad(sample: DSSample, cfg: DSConfig, head: WeightHead, frozen_ops=None):
    """L_ds of one sample and its gradient w.r.t. every head parameter.

    Returns ``(loss, grads, ops)`` with ``grads`` aligned to
    ``head.flat_views()`` and ``ops`` the per-iteration kernel operators used.
    """
    idx = sample.seeds(cfg.fps_count)
    X0 = as_xyz(sample.centers)[idx]
    F = np.asarray(sample.features, dtype=np.float64)[idx]
    Cgt = as_xyz(sample.gt_centers)[idx]
    m = len(idx)
    traj, _, caches = _shift(X0, F, cfg, head, frozen_ops, keep=True)
    loss = ds_loss(traj, Cgt, cfg.loss_weights)
    grads = [[np.zeros_like(p) for p in layer] for layer in head.params]
    G = np.zeros_like(X0)
    for i in range(cfg.iterations - 1, -1, -1):
        G = G + cfg.loss_weights[i] * np.sign(traj[i] - Cgt) / m
        cache = caches[i]
        W = cache["W"]
        dW = cfg.eta * np.stack([np.sum(G * Y, axis=1) for Y in cache["Y"]], axis=1)
        dZ = W * (dW - np.sum(dW * W, axis=1, keepdims=True))
        grads[i] = head.backward(F, i, dZ, cache)
        if cfg.backprop_through_iterations:
            G_prev = (1.0 - cfg.eta) * G
            for j, A in enumerate(cache["ops"]):
                G_prev = G_prev + cfg.eta * (A.T @ (W[:, j:j + 1] * G))
            G = G_prev
        else:
            G = np.zeros_like(G)
    ops = [c["ops"] for c in caches]
    return loss, [g for layer in grads for g in layer], ops


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def update(self, params: list, grads: list, lr: float) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class NonFiniteLoss(FloatingPointError):
    pass


def ds_train_step(batch: Sequence[DSSample], cfg: DSConfig, head: WeightHead, learning_rate: float, optimizer=None):
    """One gradient step on the batch-mean L_ds.

    ``optimizer=None`` is plain gradient descent; pass an :class:`Adam`
    instance for adaptive moments. Returns ``(head, loss)`` where ``loss``
    is measured before the update. The head is updated in place.
    """
    if learning_rate < 0:
        raise ValueError("learning rate must be non-negative")
    total = 0.0
    acc = [np.zeros_like(p) for p in head.flat_views()]
    for sample in batch:
        loss, grads, _ = ds_loss_and_grad(sample, cfg, head)
        total += loss
        for a, g in zip(acc, grads):
            a += g
    total /= len(batch)
    if not np.isfinite(total) or not all(np.all(np.isfinite(a)) for a in acc):
        raise NonFiniteLoss(f"non-finite loss {total}; step aborted")
    acc = [a / len(batch) for a in acc]
    if learning_rate > 0:
        if optimizer is None:
            for p, g in zip(head.flat_views(), acc):
                p -= learning_rate * g
        else:
            optimizer.update(head.flat_views(), acc, learning_rate)
    return head, total


def dataset_loss(samples: Sequence[DSSample], cfg: DSConfig, head: WeightHead) -> float:
    total = 0.0
    for s in samples:
        idx = s.seeds(cfg.fps_count)
        traj, _, _ = _shift(as_xyz(s.centers)[idx], np.asarray(s.features)[idx], cfg, head)
        total += ds_loss(traj, as_xyz(s.gt_centers)[idx], cfg.loss_weights)
    return total / max(len(samples), 1)


def train_ds(
    samples: Sequence[DSSample],
    cfg: DSConfig,
    head: WeightHead,
    epochs: int = 50,
    learning_rate: float = 0.002,
    batch_size: int = 4,
    seed: int = 0,
    adam: bool = True,
    log=None,
):
    """Mini-batch training loop. Returns ``(head, per-epoch mean loss list)``.

    On a non-finite loss the last good parameters are restored and the
    exception is re-raised with the curve attached.
    """
    rng = np.random.default_rng(seed)
    opt = Adam() if adam else None
    curve = []
    good = head.get_vector()
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        losses = []
        for k in range(0, len(order), batch_size):
            batch = [samples[t] for t in order[k:k + batch_size]]
            try:
                _, loss = ds_train_step(batch, cfg, head, learning_rate, opt)
            except NonFiniteLoss as exc:
                head.set_vector(good)
                exc.curve = curve
                raise
            losses.append(loss)
            good = head.get_vector()
        curve.append(float(np.mean(losses)))
        if log is not None:
            log(epoch, curve[-1])
    return head, curve
