"""Synthetic clustering benchmark: heuristic baselines vs trained dynamic shifting."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .core import ClassConfig, PanopticLabeling
from .dshift import DSConfig, DSSample, WeightHead, effective_bandwidth, softmax, train_ds, _shift
from .fusion import FusionPolicy
from .metrics import MetricReport, panoptic_quality
from .pipeline import segment_frame
from .synth import FEATURE_DIM, SceneSpec, generate_scene, mixed_size_benchmark_spec, scene_regression

BENCH_MIN_POINTS = 5
SWEEP_BANDWIDTHS = (0.2, 0.65, 1.2, 1.7, 3.2)
# alternative candidate sets for the robustness study
CANDIDATE_SETS = (
    (0.2, 1.1, 2.0),
    (0.2, 1.3, 2.4),
    (0.2, 1.5, 2.8),
    (0.2, 1.7, 3.2),
    (0.2, 1.9, 3.6),
    (0.2, 2.1, 4.0),
)


@dataclass
class BenchScene:
    scene: object
    centers: np.ndarray
    features: np.ndarray

    @property
    def frame(self):
        return self.scene.frame


def make_benchmark(n_scenes: int, seed: int = 0, spec: Optional[SceneSpec] = None) -> list:
    spec = spec or mixed_size_benchmark_spec()
    out = []
    for s in range(n_scenes):
        scene = generate_scene(spec, seed=seed + s)
        C, F = scene_regression(scene, rng=[seed + s, 7])
        out.append(BenchScene(scene, C, F))
    return out


def bench_class_config(spec: Optional[SceneSpec] = None) -> ClassConfig:
    return (spec or mixed_size_benchmark_spec()).class_config(BENCH_MIN_POINTS)


def training_samples(bench: Sequence[BenchScene]) -> list:
    samples = []
    for b in bench:
        mask = b.scene.things_mask
        ids = b.frame.instance[mask]
        targets = np.stack([b.scene.box_centers[int(k)] for k in ids]) if mask.any() else np.zeros((0, 3))
        samples.append(DSSample(b.frame.points[mask, :3], b.features[mask], b.centers[mask], targets))
    return samples


def train_head(
    bench: Sequence[BenchScene],
    cfg: DSConfig,
    epochs: int = 8,
    learning_rate: float = 0.01,
    hidden: int = 32,
    seed: int = 0,
    batch_size: int = 4,
    log=None,
):
    """Fit a weight head on benchmark scenes; returns ``(head, loss curve)``."""
    samples = [s for s in training_samples(bench) if len(s.points)]
    head = WeightHead.init(cfg.iterations, FEATURE_DIM, cfg.n_candidates, hidden, seed=seed)
    head.fit_normalization(np.vstack([s.features for s in samples]))
    return train_ds(samples, cfg, head, epochs, learning_rate, batch_size, seed, log=log)


def evaluate(bench: Sequence[BenchScene], algorithm, class_cfg: ClassConfig, ds_cfg=None, head=None):
    """PQ report over the benchmark and the wall time spent segmenting."""
    preds, gts = [], []
    policy = FusionPolicy(min_instance_points=class_cfg.min_instance_points)
    t0 = time.perf_counter()
    for b in bench:
        f = b.frame
        preds.append(segment_frame(f.points, f.semantic, b.centers, b.features, class_cfg, algorithm, ds_cfg, head, policy))
        gts.append(f.labeling())
    elapsed = time.perf_counter() - t0
    return panoptic_quality(preds, gts, class_cfg), elapsed


def bandwidth_sweep(bench, class_cfg, bandwidths=SWEEP_BANDWIDTHS) -> dict:
    return {bw: evaluate(bench, {"algorithm": "meanshift", "bandwidth": bw}, class_cfg)[0] for bw in bandwidths}


def learned_bandwidths(bench: Sequence[BenchScene], cfg: DSConfig, head: WeightHead):
    """Mean effective bandwidth per things class and iteration, plus class mean extents.

    Returns ``(bandwidth[class] -> list over iterations, extent[class])``.
    """
    per_class: dict = {}
    extents: dict = {}
    for s, b in zip(training_samples(bench), bench):
        if not len(s.points):
            continue
        mask = b.scene.things_mask
        sem = b.frame.semantic[mask]
        idx = s.seeds(cfg.fps_count)
        _, Ws, _ = _shift(s.centers[idx], s.features[idx], cfg, head)
        for c in np.unique(sem):
            sel = sem[idx] == c
            bws = [effective_bandwidth(W[sel], cfg.candidates) for W in Ws]
            acc = per_class.setdefault(int(c), [[] for _ in Ws])
            for k, v in enumerate(bws):
                acc[k].extend(v.tolist())
        for k, inst in b.scene.instances.items():
            extents.setdefault(inst.class_id, []).append(inst.length)
    bw = {c: [float(np.mean(v)) for v in lists] for c, lists in per_class.items()}
    ext = {c: float(np.mean(v)) for c, v in extents.items()}
    return bw, ext


def size_bandwidth_spearman(bw: dict, ext: dict, iteration: int = 0) -> float:
    classes = sorted(set(bw) & set(ext))
    rho, _ = spearmanr([ext[c] for c in classes], [bw[c][iteration] for c in classes])
    return float(rho)


def bench_rows(bench, class_cfg, grid: Sequence[dict], ds_cfg=None, head=None) -> list:
    """One row per grid entry: algorithm, params, PQ, PQ^Th, per-class PQ, runtime."""
    rows = []
    for entry in grid:
        entry = dict(entry)
        algo = entry.get("algorithm")
        if algo == "dshift":
            rep, sec = evaluate(bench, "dshift", class_cfg, ds_cfg, head)
        else:
            rep, sec = evaluate(bench, entry, class_cfg)
        row = {
            "algorithm": algo,
            "params": ";".join(f"{k}={v}" for k, v in entry.items() if k != "algorithm"),
            "pq": rep["pq"],
            "pq_th": rep["pq_th"],
            "runtime_s": sec,
        }
        for c in class_cfg.things_ids:
            if c in rep.per_class:
                row[f"pq_{class_cfg.name(c)}"] = rep.per_class[c].pq
        rows.append(row)
    return rows
