"""Consensus-driven fusion of class-agnostic instances with point semantics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import STUFF, THINGS, ClassConfig, PanopticLabeling, relabel_contiguous

DROP_INSTANCE = "drop_instance"
KEEP_AS_THINGS = "keep_instance_as_majority_things"


@dataclass(frozen=True)
class FusionPolicy:
    tie_break: str = "lowest-class-id"
    stuff_majority_action: str = DROP_INSTANCE
    min_instance_points: int = 50

    def __post_init__(self):
        if self.min_instance_points < 1:
            raise ValueError("min_instance_points must be >= 1")
        if self.stuff_majority_action not in (DROP_INSTANCE, KEEP_AS_THINGS):
            raise ValueError(f"unknown stuff_majority_action {self.stuff_majority_action!r}")
        if self.tie_break != "lowest-class-id":
            raise ValueError("only lowest-class-id tie breaking is supported")


def _modal(labels: np.ndarray) -> int:
    vals, counts = np.unique(labels, return_counts=True)
    # np.unique sorts, so argmax picks the lowest id among ties
    return int(vals[np.argmax(counts)])


def majority_vote_fuse(semantic, instance, cfg: ClassConfig, policy: FusionPolicy | None = None) -> PanopticLabeling:
    """Give every point of an instance the instance's most frequent class.

    Instances smaller than ``policy.min_instance_points`` are dissolved
    (id set to 0, semantics untouched). An instance whose vote lands on a
    stuff or ignore class is dissolved, or with
    ``keep_instance_as_majority_things`` relabeled to its most frequent
    things class. Ids are not renumbered.
    """
    if policy is None:
        policy = FusionPolicy(min_instance_points=cfg.min_instance_points)
    sem = np.array(semantic, dtype=np.int64).reshape(-1)
    ins = np.array(instance, dtype=np.int64).reshape(-1)
    if sem.shape != ins.shape:
        raise ValueError("semantic and instance arrays differ in length")
    things = set(cfg.things_ids)
    for k in np.unique(ins[ins != 0]):
        sel = ins == k
        if sel.sum() < policy.min_instance_points:
            ins[sel] = 0
            continue
        winner = _modal(sem[sel])
        if winner not in things:
            th = np.isin(sem[sel], list(things))
            if policy.stuff_majority_action == DROP_INSTANCE or not th.any():
                ins[sel] = 0
                continue
            winner = _modal(sem[sel][th])
        sem[sel] = winner
    return PanopticLabeling(sem, ins)


def filter_small_instances(instance, min_pts: int) -> np.ndarray:
    """Zero out ids with fewer than ``min_pts`` points and renumber the rest 1..K."""
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    ins = np.array(instance, dtype=np.int64).reshape(-1)
    ids, counts = np.unique(ins, return_counts=True)
    small = ids[(counts < min_pts) & (ids != 0)]
    ins[np.isin(ins, small)] = 0
    return relabel_contiguous(ins)
