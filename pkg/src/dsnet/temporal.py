"""Temporally unified clustering over pose-aligned sliding windows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .cluster import ClusterResult
from .core import ClassConfig, Frame, PanopticLabeling
from .dshift import DSConfig, WeightHead
from .fusion import FusionPolicy, majority_vote_fuse
from .geom import align_frame, tight_box_center
from .pipeline import cluster_things

WINDOW_FPS_COUNT = 20000


@dataclass
class FusedWindow:
    points: np.ndarray  # N x 4, reference-frame coordinates
    frame_mask: np.ndarray  # source frame index per point
    offsets: np.ndarray  # start row of every frame, plus the total
    frame_indices: tuple

    def split(self, values) -> list:
        values = np.asarray(values)
        return [values[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def __len__(self):
        return len(self.points)


def fuse_window(frames: Sequence[Frame], ref: int = 0) -> FusedWindow:
    """Align every frame into ``frames[ref]``'s coordinates and concatenate."""
    if not frames:
        raise ValueError("window must hold at least one frame")
    for f in frames:
        if f.pose is None:
            raise ValueError(f"frame {f.timestamp_index} has no pose")
    ref_pose = frames[ref].pose
    parts = [align_frame(f.points, f.pose, ref_pose) for f in frames]
    sizes = [len(p) for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    mask = np.concatenate([np.full(n, f.timestamp_index, dtype=np.int64) for n, f in zip(sizes, frames)])
    pts = np.vstack(parts) if parts else np.zeros((0, 4))
    return FusedWindow(pts, mask, offsets, tuple(f.timestamp_index for f in frames))


def overlapped_center_targets(fused: FusedWindow, ids) -> np.ndarray:
    """Tight-box center of the union of each id's points over the whole window.

    Rows with id 0 get their own position.
    """
    ids = np.asarray(ids)
    P = fused.points[:, :3]
    out = P.copy()
    for k in np.unique(ids[ids != 0]):
        sel = ids == k
        out[sel] = tight_box_center(P[sel])
    return out


def cluster_window(fused: FusedWindow, things, centers, features, cfg: Optional[DSConfig] = None, head: Optional[WeightHead] = None, algorithm="dshift") -> ClusterResult:
    """Frame-agnostic clustering of the fused cloud's things points.

    ``cfg`` defaults to the 2-frame setting (``fps_count = 20000``).
    Returned ids cover the things points only, in fused order.
    """
    things = np.asarray(things, dtype=bool)
    if cfg is None:
        cfg = DSConfig(fps_count=WINDOW_FPS_COUNT)
    ids = cluster_things(fused.points, centers, features, things, algorithm, cfg, head)
    sub = ids[things]
    modes = {}
    C = np.asarray(centers, dtype=np.float64)[things] if things.any() else np.zeros((0, 3))
    for k in np.unique(sub[sub != 0]):
        modes[int(k)] = C[sub == k].mean(axis=0)
    return ClusterResult(sub, modes)


@dataclass
class TrackIdMap:
    next_id: int = 1
    local_to_global: dict = field(default_factory=dict)

    def fresh(self) -> int:
        gid = self.next_id
        self.next_id += 1
        return gid


def stitch_ids(prev_global_shared, cur_local_shared, cur_local_ids: Sequence[int], track_map: TrackIdMap):
    """Carry global track ids from the previous window into the current one.

    Overlap is counted on the points of the shared frame(s). Pairs are taken
    greedily by decreasing overlap (ties: lower global id, then lower local
    id); each global id is inherited at most once. Local clusters left
    without a partner get fresh ids.

    Returns ``(track_map, {local id: global id})``.
    """
    prev = np.asarray(prev_global_shared, dtype=np.int64)
    cur = np.asarray(cur_local_shared, dtype=np.int64)
    if prev.shape != cur.shape:
        raise ValueError(f"shared frame sizes differ: {prev.shape} vs {cur.shape}")
    both = (prev != 0) & (cur != 0)
    pairs, counts = (np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64))
    if both.any():
        pairs, counts = np.unique(np.stack([cur[both], prev[both]], axis=1), axis=0, return_counts=True)
    order = sorted(range(len(counts)), key=lambda k: (-counts[k], pairs[k][1], pairs[k][0]))
    mapping = {}
    used = set()
    for k in order:
        local, glob = int(pairs[k][0]), int(pairs[k][1])
        if local in mapping or glob in used:
            continue
        mapping[local] = glob
        used.add(glob)
    for local in sorted(int(c) for c in cur_local_ids if c != 0):
        if local not in mapping:
            mapping[local] = track_map.fresh()
    track_map.local_to_global = mapping
    return track_map, mapping


Regressor = Callable[[FusedWindow, Sequence[Frame], int], tuple]


def run_4d_pipeline(
    frames: Sequence[Frame],
    pred_semantics: Sequence,
    class_cfg: ClassConfig,
    regressor: Regressor,
    cfg: Optional[DSConfig] = None,
    head: Optional[WeightHead] = None,
    algorithm="dshift",
    window: int = 2,
    policy: Optional[FusionPolicy] = None,
) -> list:
    """Per-frame panoptic labels with temporally consistent instance ids.

    Windows of ``window`` frames slide with stride 1. ``regressor(fused,
    window_frames, start)`` returns full-length ``(centers, features)`` for
    the fused cloud. Each window's clusters inherit ids from the previous
    window through the frames they share; only the window's last frame is
    emitted (the first window emits all of its frames).
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(frames)
    if len(pred_semantics) != n:
        raise ValueError("one semantic prediction per frame is required")
    if cfg is None:
        cfg = DSConfig(fps_count=WINDOW_FPS_COUNT if window > 1 else 10000)
    track_map = TrackIdMap()
    raw_ids: list = [None] * n
    starts = range(max(n - window + 1, 1))
    for w in starts:
        win = list(frames[w:w + window])
        fused = fuse_window(win)
        sem = np.concatenate([np.asarray(pred_semantics[w + k], dtype=np.int64) for k in range(len(win))])
        things = class_cfg.is_things(sem)
        centers, features = regressor(fused, win, w)
        local = cluster_things(fused.points, centers, features, things, algorithm, cfg, head)
        per_frame = fused.split(local)
        shared = [k for k in range(len(win)) if raw_ids[w + k] is not None]
        if shared:
            prev = np.concatenate([raw_ids[w + k] for k in shared])
            cur = np.concatenate([per_frame[k] for k in shared])
        else:
            prev = cur = np.zeros(0, dtype=np.int64)
        _, mapping = stitch_ids(prev, cur, np.unique(local), track_map)
        lut = np.vectorize(lambda v: mapping.get(int(v), 0), otypes=[np.int64])
        for k in range(len(win)):
            if raw_ids[w + k] is None:
                raw_ids[w + k] = lut(per_frame[k]) if len(per_frame[k]) else per_frame[k].astype(np.int64)
    return [
        majority_vote_fuse(pred_semantics[t], raw_ids[t], class_cfg, policy)
        for t in range(n)
    ]
