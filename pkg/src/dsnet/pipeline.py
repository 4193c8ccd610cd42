"""Single-frame panoptic segmentation: cluster things points, then fuse with semantics."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .cluster import ClusterResult, heuristic_cluster
from .core import ClassConfig, PanopticLabeling
from .dshift import DSConfig, WeightHead, ds_forward
from .fusion import FusionPolicy, majority_vote_fuse


def cluster_things(points, centers, features, things, algorithm, ds_cfg=None, head=None) -> np.ndarray:
    """Per-point instance ids (0 outside ``things``) from the chosen clusterer.

    ``algorithm`` is ``"dshift"`` or a heuristic spec dict such as
    ``{"algorithm": "meanshift", "bandwidth": 1.2}``; heuristics cluster the
    regressed centers directly.
    """
    things = np.asarray(things, dtype=bool)
    ids = np.zeros(len(things), dtype=np.int64)
    if not things.any():
        return ids
    P = np.asarray(points, dtype=np.float64)[things, :3]
    C = np.asarray(centers, dtype=np.float64)[things]
    if algorithm == "dshift":
        if head is None:
            raise ValueError("dynamic shifting needs a trained weight head")
        res = ds_forward(P, np.asarray(features, dtype=np.float64)[things], C, ds_cfg or DSConfig(), head)
    else:
        res = heuristic_cluster(C, algorithm)
    ids[things] = res.ids
    return ids


def segment_frame(
    points,
    semantic,
    centers,
    features,
    class_cfg: ClassConfig,
    algorithm="dshift",
    ds_cfg: Optional[DSConfig] = None,
    head: Optional[WeightHead] = None,
    policy: Optional[FusionPolicy] = None,
) -> PanopticLabeling:
    """Panoptic labels for one frame.

    ``centers`` and ``features`` are full-length arrays; rows of points not
    predicted as things are ignored.
    """
    semantic = np.asarray(semantic, dtype=np.int64)
    things = class_cfg.is_things(semantic)
    ids = cluster_things(points, centers, features, things, algorithm, ds_cfg, head)
    return majority_vote_fuse(semantic, ids, class_cfg, policy)
