"""Panoptic quality (PQ/SQ/RQ, PQ-dagger, mIoU) and LSTQ evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import STUFF, THINGS, ClassConfig, PanopticLabeling
from .io import atomic_write_bytes

MATCH_IOU = 0.5

AGGREGATE_KEYS = (
    "pq", "pq_dagger", "rq", "sq",
    "pq_th", "rq_th", "sq_th",
    "pq_st", "rq_st", "sq_st",
    "miou",
)


def segment_iou(pred_points: Iterable, gt_points: Iterable) -> float:
    pred, gt = set(pred_points), set(gt_points)
    union = len(pred | gt)
    if union == 0:
        raise ValueError("IoU of two empty segments is undefined")
    return len(pred & gt) / union


@dataclass
class ClassStats:
    pq: float
    sq: float
    rq: float
    iou: float
    tp: int
    fp: int
    fn: int


@dataclass
class MetricReport:
    per_class: dict
    aggregates: dict
    class_names: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.aggregates[key]

    def to_dict(self) -> dict:
        return {
            **{k: self.aggregates[k] for k in AGGREGATE_KEYS},
            "per_class": {
                self.class_names.get(c, str(c)): vars(s) for c, s in sorted(self.per_class.items())
            },
        }

    def to_table(self) -> str:
        lines = [f"{'class':<14}{'PQ':>8}{'SQ':>8}{'RQ':>8}{'IoU':>8}{'TP':>6}{'FP':>6}{'FN':>6}"]
        for c, s in sorted(self.per_class.items()):
            name = self.class_names.get(c, str(c))
            lines.append(
                f"{name:<14}{100 * s.pq:8.2f}{100 * s.sq:8.2f}{100 * s.rq:8.2f}{100 * s.iou:8.2f}"
                f"{s.tp:6d}{s.fp:6d}{s.fn:6d}"
            )
        lines.append("")
        lines.extend(f"{k:<10}{100 * self.aggregates[k]:8.2f}" for k in AGGREGATE_KEYS)
        return "\n".join(lines)

    def write(self, path) -> None:
        atomic_write_bytes(path, json.dumps(self.to_dict(), indent=2, sort_keys=True).encode())


def _segment_keys(sem: np.ndarray, ins: np.ndarray, stuff: np.ndarray, things: np.ndarray) -> np.ndarray:
    """Per-point segment key ``class * 2^32 + id`` (id forced to 0 for stuff); -1 = no segment."""
    is_stuff = np.isin(sem, stuff)
    is_thing = np.isin(sem, things) & (ins != 0)
    key = np.full(len(sem), -1, dtype=np.int64)
    key[is_stuff] = sem[is_stuff] << 32
    key[is_thing] = (sem[is_thing] << 32) + ins[is_thing]
    return key


class PanopticEvaluator:
    """Accumulates PQ statistics over frames; counts are summed before any ratio."""

    def __init__(self, cfg: ClassConfig):
        self.cfg = cfg
        self.classes = cfg.things_ids + cfg.stuff_ids
        self._things = np.array(cfg.things_ids, dtype=np.int64)
        self._stuff = np.array(cfg.stuff_ids, dtype=np.int64)
        n = len(self.classes)
        self._col = {c: k for k, c in enumerate(self.classes)}
        self.tp = np.zeros(n, dtype=np.int64)
        self.fp = np.zeros(n, dtype=np.int64)
        self.fn = np.zeros(n, dtype=np.int64)
        self.iou_sum = np.zeros(n)
        self.inter = np.zeros(n, dtype=np.int64)
        self.union = np.zeros(n, dtype=np.int64)

    def merge(self, other: "PanopticEvaluator") -> "PanopticEvaluator":
        for name in ("tp", "fp", "fn", "iou_sum", "inter", "union"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self

    def add(self, pred: PanopticLabeling, gt: PanopticLabeling) -> None:
        if len(pred) != len(gt):
            raise ValueError(f"prediction has {len(pred)} points, ground truth {len(gt)}")
        valid = ~self.cfg.is_ignored(gt.semantic)
        ps, pi = pred.semantic[valid], pred.instance[valid]
        gs, gi = gt.semantic[valid], gt.instance[valid]
        for c, k in self._col.items():
            g, p = gs == c, ps == c
            self.inter[k] += np.count_nonzero(g & p)
            self.union[k] += np.count_nonzero(g | p)

        pkey = _segment_keys(ps, pi, self._stuff, self._things)
        gkey = _segment_keys(gs, gi, self._stuff, self._things)
        p_ids, p_area = np.unique(pkey[pkey >= 0], return_counts=True)
        g_ids, g_area = np.unique(gkey[gkey >= 0], return_counts=True)
        both = (pkey >= 0) & (gkey >= 0) & ((pkey >> 32) == (gkey >> 32))
        pairs, inter = np.unique(np.stack([pkey[both], gkey[both]], axis=1), axis=0, return_counts=True)
        p_matched = np.zeros(len(p_ids), dtype=bool)
        g_matched = np.zeros(len(g_ids), dtype=bool)
        for (pk, gk), n in zip(pairs, inter):
            a = np.searchsorted(p_ids, pk)
            b = np.searchsorted(g_ids, gk)
            iou = n / (p_area[a] + g_area[b] - n)
            if iou > MATCH_IOU:
                col = self._col[int(gk >> 32)]
                self.tp[col] += 1
                self.iou_sum[col] += iou
                p_matched[a] = True
                g_matched[b] = True
        for ids, matched, counter in ((p_ids, p_matched, self.fp), (g_ids, g_matched, self.fn)):
            for key in ids[~matched]:
                counter[self._col[int(key >> 32)]] += 1

    def report(self) -> MetricReport:
        per_class = {}
        present = []
        for c, k in self._col.items():
            if self.union[k] == 0 and self.tp[k] + self.fp[k] + self.fn[k] == 0:
                continue
            present.append(c)
            tp, fp, fn = int(self.tp[k]), int(self.fp[k]), int(self.fn[k])
            sq = self.iou_sum[k] / tp if tp else 0.0
            denom = tp + 0.5 * fp + 0.5 * fn
            rq = tp / denom if denom else 0.0
            iou = self.inter[k] / self.union[k] if self.union[k] else 0.0
            per_class[c] = ClassStats(sq * rq, sq, rq, float(iou), tp, fp, fn)

        def mean(vals):
            vals = list(vals)
            return float(np.mean(vals)) if vals else 0.0

        things = [c for c in present if self.cfg.kind(c) == THINGS]
        stuff = [c for c in present if self.cfg.kind(c) == STUFF]
        agg = {
            "pq": mean(per_class[c].pq for c in present),
            "sq": mean(per_class[c].sq for c in present),
            "rq": mean(per_class[c].rq for c in present),
            "pq_dagger": mean(per_class[c].iou if c in stuff else per_class[c].pq for c in present),
            "pq_th": mean(per_class[c].pq for c in things),
            "sq_th": mean(per_class[c].sq for c in things),
            "rq_th": mean(per_class[c].rq for c in things),
            "pq_st": mean(per_class[c].pq for c in stuff),
            "sq_st": mean(per_class[c].sq for c in stuff),
            "rq_st": mean(per_class[c].rq for c in stuff),
            "miou": mean(per_class[c].iou for c in present),
        }
        names = {c: self.cfg.name(c) for c in per_class}
        return MetricReport(per_class, agg, names)


def panoptic_quality(preds: Sequence[PanopticLabeling], gts: Sequence[PanopticLabeling], cfg: ClassConfig) -> MetricReport:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predicted frames vs {len(gts)} ground-truth frames")
    ev = PanopticEvaluator(cfg)
    for p, g in zip(preds, gts):
        ev.add(p, g)
    return ev.report()


def mean_iou(preds, gts, cfg: ClassConfig) -> float:
    """Class-mean point IoU over classes present in ground truth or prediction."""
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    g = np.asarray(gts, dtype=np.int64).reshape(-1)
    if p.shape != g.shape:
        raise ValueError("prediction and ground truth differ in length")
    valid = ~cfg.is_ignored(g)
    p, g = p[valid], g[valid]
    ious = []
    for c in cfg.things_ids + cfg.stuff_ids:
        union = np.count_nonzero((g == c) | (p == c))
        if union:
            ious.append(np.count_nonzero((g == c) & (p == c)) / union)
    return float(np.mean(ious)) if ious else 0.0


@dataclass
class TrackReport:
    lstq: float
    s_assoc: float
    s_cls: float
    class_iou: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lstq": self.lstq, "s_assoc": self.s_assoc, "s_cls": self.s_cls,
                "class_iou": {str(k): v for k, v in sorted(self.class_iou.items())}}

    def to_table(self) -> str:
        rows = [f"{'LSTQ':<10}{100 * self.lstq:8.2f}", f"{'S_assoc':<10}{100 * self.s_assoc:8.2f}",
                f"{'S_cls':<10}{100 * self.s_cls:8.2f}"]
        return "\n".join(rows)

    def write(self, path) -> None:
        atomic_write_bytes(path, json.dumps(self.to_dict(), indent=2, sort_keys=True).encode())


class TrackEvaluator:
    """Sequence-level LSTQ accumulator; tracks are whole-sequence point sets keyed by id."""

    def __init__(self, cfg: ClassConfig):
        self.cfg = cfg
        self.classes = cfg.things_ids + cfg.stuff_ids
        self.inter = dict.fromkeys(self.classes, 0)
        self.union = dict.fromkeys(self.classes, 0)
        self.pred_size: dict = {}
        self.gt_size: dict = {}
        self.tpa: dict = {}

    def add(self, pred: PanopticLabeling, gt: PanopticLabeling) -> None:
        if len(pred) != len(gt):
            raise ValueError(f"prediction has {len(pred)} points, ground truth {len(gt)}")
        valid = ~self.cfg.is_ignored(gt.semantic)
        ps, pi = pred.semantic[valid], pred.instance[valid]
        gs, gi = gt.semantic[valid], gt.instance[valid]
        for c in self.classes:
            g, p = gs == c, ps == c
            self.inter[c] += int(np.count_nonzero(g & p))
            self.union[c] += int(np.count_nonzero(g | p))
        gt_track = self.cfg.is_things(gs) & (gi != 0)
        pr_track = pi != 0
        for store, ids in ((self.pred_size, pi[pr_track]), (self.gt_size, gi[gt_track])):
            for k, n in zip(*np.unique(ids, return_counts=True)):
                store[int(k)] = store.get(int(k), 0) + int(n)
        both = gt_track & pr_track
        if both.any():
            pairs, n = np.unique(np.stack([pi[both], gi[both]], axis=1), axis=0, return_counts=True)
            for (s, t), c in zip(pairs, n):
                key = (int(s), int(t))
                self.tpa[key] = self.tpa.get(key, 0) + int(c)

    def report(self) -> TrackReport:
        if not self.gt_size:
            raise ValueError("association score is undefined without ground-truth tracks")
        class_iou = {c: self.inter[c] / self.union[c] for c in self.classes if self.union[c]}
        s_cls = float(np.mean(list(class_iou.values()))) if class_iou else 0.0
        per_track = dict.fromkeys(self.gt_size, 0.0)
        for (s, t), tpa in self.tpa.items():
            iou = tpa / (self.pred_size[s] + self.gt_size[t] - tpa)
            per_track[t] += tpa * iou
        s_assoc = float(np.mean([per_track[t] / self.gt_size[t] for t in self.gt_size]))
        return TrackReport(math.sqrt(s_cls * s_assoc), s_assoc, s_cls, class_iou)


def lstq(preds: Sequence[PanopticLabeling], gts: Sequence[PanopticLabeling], cfg: ClassConfig) -> TrackReport:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predicted frames vs {len(gts)} ground-truth frames")
    ev = TrackEvaluator(cfg)
    for p, g in zip(preds, gts):
        ev.add(p, g)
    return ev.report()
