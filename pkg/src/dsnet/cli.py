"""Command-line entry point: ``dsnet <subcommand> [flags]``.

Every subcommand accepts ``--config run.json``; its keys use the flag
names with dashes replaced by underscores. Flags given on the command
line win over the file.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .bench import BENCH_MIN_POINTS, SWEEP_BANDWIDTHS, bench_rows, make_benchmark, train_head
from .core import ClassConfig, Frame, PanopticLabeling, default_class_config
from .dshift import DEFAULT_CANDIDATES, DSConfig, DSSample, NonFiniteLoss, WeightHead, center_offset_target, train_ds
from .fusion import FusionPolicy
from .geom import align_frame
from .metrics import PanopticEvaluator, TrackEvaluator
from .pipeline import segment_frame
from .synth import FEATURE_DIM, SceneSpec, SequenceRegressor, generate_sequence, mixed_size_benchmark_spec
from .temporal import WINDOW_FPS_COUNT, fuse_window, run_4d_pipeline

HEURISTIC_DEFAULT_BANDWIDTH = {"meanshift": 1.2, "bfs": 0.3, "dbscan": 0.3}
DBSCAN_MIN_PTS = 3


class CLIError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _spec_from(value) -> SceneSpec:
    if value is None:
        return mixed_size_benchmark_spec()
    if isinstance(value, dict):
        return SceneSpec.from_dict(value)
    return SceneSpec.load(value)


def _class_config(args, root=None, spec: Optional[SceneSpec] = None) -> ClassConfig:
    path = getattr(args, "classes", None)
    if path is None and root is not None and (Path(root) / "classes.json").exists():
        path = Path(root) / "classes.json"
    if path is not None:
        cfg = ClassConfig.from_dict(json.loads(Path(path).read_text()))
    elif spec is not None:
        cfg = spec.class_config()
    else:
        cfg = default_class_config()
    if args.min_points is not None:
        cfg = ClassConfig(cfg.classes, args.min_points)
    return cfg


def _ds_config(args, head_candidates=None, window: int = 1, head=None) -> DSConfig:
    cand = args.bandwidths if args.bandwidths else head_candidates or DEFAULT_CANDIDATES
    if head_candidates is not None and tuple(cand) != tuple(head_candidates):
        raise CLIError(f"--bandwidths {list(cand)} do not match the head's candidates {list(head_candidates)}")
    fps = args.fps_count or (WINDOW_FPS_COUNT if window > 1 else 10000)
    return DSConfig(
        candidates=tuple(cand),
        iterations=head.iterations if head is not None else (args.iterations if args.iterations is not None else 4),
        fps_count=fps,
        final_cluster={"algorithm": "meanshift", "bandwidth": args.final_bandwidth},
    )


def _algorithm(args):
    algo = args.algorithm
    if algo == "dshift":
        return "dshift"
    bw = args.bandwidth if args.bandwidth is not None else HEURISTIC_DEFAULT_BANDWIDTH[algo]
    if algo == "meanshift":
        return {"algorithm": "meanshift", "bandwidth": bw}
    if algo == "bfs":
        return {"algorithm": "bfs", "radius": bw, "min_pts": 1}
    return {"algorithm": "dbscan", "eps": bw, "min_pts": DBSCAN_MIN_PTS}


def _load_head(args):
    if args.algorithm != "dshift":
        return None, None
    if not args.head:
        raise CLIError("--algorithm dshift needs --head (train one with `dsnet train-ds`)")
    head, cand = WeightHead.load(args.head)
    if args.iterations is not None and args.iterations != head.iterations:
        raise CLIError(f"--iterations {args.iterations} but the head has {head.iterations}")
    return head, cand


def _sequences(args, root) -> list:
    seqs = [args.sequence] if args.sequence else io.list_sequences(root)
    if not seqs:
        raise CLIError(f"no sequences under {Path(root) / 'sequences'}")
    return seqs


def _write_text(path, text: str) -> None:
    io.atomic_write_bytes(path, text.encode())


def _per_frame_regression(seq, t):
    """Regressed centers and features of frame ``t`` against its own box centers."""
    f = seq.frames[t]
    reg = SequenceRegressor(seq, seed=seq.spec.seed, overlapped=False)
    return reg(fuse_window([f]), [f], t)


def _write_synthetic(root, seq, sequence_name: str) -> None:
    d = io.sequence_dir(root, sequence_name)
    for t, f in enumerate(seq.frames):
        C, F = _per_frame_regression(seq, t)
        io.write_sequence_frame(root, sequence_name, t, f, f.labeling(), C - f.points[:, :3], F)
    io.write_poses(d / "poses.txt", [f.pose for f in seq.frames])
    io.write_calib(d / "calib.txt", {"P0": np.eye(4), "Tr": np.eye(4)})


class FileRegressor:
    """Centers for a fused window from per-frame offset files, aligned into the window frame."""

    def __init__(self, frames, offsets, features):
        self.frames, self.offsets, self.features = frames, offsets, features

    def __call__(self, fused, window_frames, start):
        ref = window_frames[0].pose
        C, F = [], []
        for k, f in enumerate(window_frames):
            t = start + k
            if self.offsets[t] is None or self.features[t] is None:
                raise CLIError(f"frame {t}: missing offsets/features side files")
            C.append(align_frame(f.points[:, :3] + self.offsets[t], f.pose, ref))
            F.append(self.features[t])
        return np.vstack(C), np.vstack(F)


def _write_predictions(root, sequence, names, labelings, tracks: bool) -> None:
    d = io.sequence_dir(root, sequence)
    for name, lab in zip(names, labelings):
        io.write_labels(d / "predictions" / f"{name}.label", lab)
    if tracks:
        info: dict = {}
        for name, lab in zip(names, labelings):
            for k in np.unique(lab.instance[lab.instance != 0]):
                sel = lab.instance == k
                cls, n = np.unique(lab.semantic[sel], return_counts=True)
                entry = info.setdefault(str(int(k)), {"frames": [], "points": 0, "class_votes": {}})
                entry["frames"].append(name)
                entry["points"] += int(sel.sum())
                for c, m in zip(cls, n):
                    entry["class_votes"][str(int(c))] = entry["class_votes"].get(str(int(c)), 0) + int(m)
        for entry in info.values():
            votes = entry.pop("class_votes")
            entry["class"] = int(min(votes, key=lambda c: (-votes[c], int(c))))
        _write_text(d / "tracks.json", json.dumps({"tracks": info}, indent=2, sort_keys=True))


# ---------------------------------------------------------------- commands


def cmd_synth_gen(args) -> int:
    if not args.out:
        raise CLIError("--out is required")
    spec = _spec_from(args.spec)
    root = Path(args.out)
    seed = args.seed if args.seed is not None else spec.seed
    for s in range(args.sequences):
        seq = generate_sequence(spec, args.frames, seed=seed + s)
        _write_synthetic(root, seq, f"{s:02d}")
    cfg = spec.class_config(args.min_points if args.min_points is not None else 50)
    _write_text(root / "classes.json", json.dumps(cfg.to_dict(), indent=2))
    _write_text(root / "spec.json", json.dumps(spec.to_dict(), indent=2))
    print(f"wrote {args.sequences} sequence(s) x {args.frames} frame(s) to {root}")
    return 0


def cmd_segment(args) -> int:
    if not args.out:
        raise CLIError("--out is required")
    head, cand = _load_head(args)
    window = args.window or 1
    cfg = _ds_config(args, cand, window, head)
    algo = _algorithm(args)
    out = Path(args.out)
    if args.spec is not None or args.input is None:
        return _segment_synthetic(args, algo, cfg, head, window, out)
    root = Path(args.input)
    class_cfg = _class_config(args, root)
    policy = FusionPolicy(min_instance_points=class_cfg.min_instance_points)
    for sequence in _sequences(args, root):
        data = io.load_sequence(root, sequence, labels=args.semantics, feature_dim=FEATURE_DIM)
        frames = data["frames"]
        for name, f in zip(data["names"], frames):
            if f.semantic is None:
                raise CLIError(f"sequence {sequence} frame {name}: no semantic labels in '{args.semantics}/'")
        if window == 1:
            preds = []
            for name, f, O, F in zip(data["names"], frames, data["offsets"], data["features"]):
                if O is None or F is None:
                    raise CLIError(f"sequence {sequence} frame {name}: missing offsets/features side files")
                preds.append(segment_frame(f.points, f.semantic, f.points[:, :3] + O, F, class_cfg, algo, cfg, head, policy))
        else:
            if any(f.pose is None for f in frames):
                raise CLIError(f"sequence {sequence}: 4D segmentation needs poses.txt")
            reg = FileRegressor(frames, data["offsets"], data["features"])
            preds = run_4d_pipeline(frames, [f.semantic for f in frames], class_cfg, reg, cfg, head, algo, window, policy)
        _write_predictions(out, sequence, data["names"], preds, tracks=window > 1)
        print(f"sequence {sequence}: {len(preds)} prediction file(s) written")
    return 0


def _segment_synthetic(args, algo, cfg, head, window, out) -> int:
    """Generate a sequence in memory, segment it, and write scans, ground truth and predictions."""
    spec = _spec_from(args.spec)
    seed = args.seed if args.seed is not None else spec.seed
    seq = generate_sequence(spec, args.frames, seed=seed)
    class_cfg = _class_config(args, spec=spec)
    policy = FusionPolicy(min_instance_points=class_cfg.min_instance_points)
    sems = [f.semantic for f in seq.frames]
    if window == 1:
        preds = []
        for t, f in enumerate(seq.frames):
            C, F = _per_frame_regression(seq, t)
            preds.append(segment_frame(f.points, f.semantic, C, F, class_cfg, algo, cfg, head, policy))
    else:
        reg = SequenceRegressor(seq, seed=seed, overlapped=True)
        preds = run_4d_pipeline(seq.frames, sems, class_cfg, reg, cfg, head, algo, window, policy)
    _write_synthetic(out, seq, "00")
    _write_text(out / "classes.json", json.dumps(class_cfg.to_dict(), indent=2))
    names = [io.frame_name(t) for t in range(len(preds))]
    _write_predictions(out, "00", names, preds, tracks=window > 1)
    print(f"synthetic sequence: {len(preds)} prediction file(s) written to {out}")
    return 0


def _paired_labels(args):
    """Yield ``(sequence, names, gts, preds)`` after checking both layouts agree."""
    gt_root, pred_root = Path(args.gt), Path(args.pred or args.gt)
    for sequence in _sequences(args, gt_root):
        gdir = io.sequence_dir(gt_root, sequence) / "labels"
        pdir = io.sequence_dir(pred_root, sequence) / "predictions"
        gnames, pnames = io.scan_ids(gdir, ".label"), io.scan_ids(pdir, ".label")
        missing = sorted(set(gnames) - set(pnames))
        extra = sorted(set(pnames) - set(gnames))
        if missing or extra or not gnames:
            raise CLIError(
                f"sequence {sequence}: frame mismatch (missing predictions: {missing or 'none'}; "
                f"unexpected predictions: {extra or 'none'})"
            )
        gts, preds, bad = [], [], []
        for name in gnames:
            g, p = io.read_labels(gdir / f"{name}.label"), io.read_labels(pdir / f"{name}.label")
            if len(g) != len(p):
                bad.append(f"{name} ({len(p)} vs {len(g)} points)")
            gts.append(g)
            preds.append(p)
        if bad:
            raise CLIError(f"sequence {sequence}: point count mismatch in frames {', '.join(bad)}")
        yield sequence, gnames, gts, preds


def cmd_eval(args) -> int:
    cfg = _class_config(args, args.gt)
    ev = PanopticEvaluator(cfg)
    for _, _, gts, preds in _paired_labels(args):
        for g, p in zip(gts, preds):
            ev.add(p, g)
    report = ev.report()
    print(report.to_table())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.write(args.out)
    return 0


def cmd_eval4d(args) -> int:
    cfg = _class_config(args, args.gt)
    ev = TrackEvaluator(cfg)
    for k, (_, _, gts, preds) in enumerate(_paired_labels(args)):
        # track ids are per sequence; keep them apart in the shared accumulator
        base = k << 32
        for g, p in zip(gts, preds):
            ev.add(
                PanopticLabeling(p.semantic, np.where(p.instance != 0, p.instance + base, 0)),
                PanopticLabeling(g.semantic, np.where(g.instance != 0, g.instance + base, 0)),
            )
    report = ev.report()
    print(report.to_table())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.write(args.out)
    return 0


def _dataset_samples(root, args) -> list:
    samples = []
    for sequence in _sequences(args, root):
        data = io.load_sequence(root, sequence, feature_dim=FEATURE_DIM)
        for name, f, O, F in zip(data["names"], data["frames"], data["offsets"], data["features"]):
            if f.instance is None or O is None or F is None:
                raise CLIError(f"sequence {sequence} frame {name}: training needs labels, offsets and features")
            mask = f.instance != 0
            if not mask.any():
                continue
            P = f.points[mask, :3]
            gt = P + center_offset_target(P, f.instance[mask])
            samples.append(DSSample(P, F[mask], P + O[mask], gt))
    return samples


def cmd_train_ds(args) -> int:
    if not args.out:
        raise CLIError("--out is required")
    cfg = _ds_config(args)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    curve_path = out.with_name(out.name + ".loss.csv")
    if args.input:
        samples = _dataset_samples(Path(args.input), args)
    else:
        from .bench import training_samples

        bench = make_benchmark(args.scenes, seed=seed, spec=_spec_from(args.spec))
        samples = [s for s in training_samples(bench) if len(s.points)]
    if not samples:
        raise CLIError("no training samples with things points")
    head = WeightHead.init(cfg.iterations, FEATURE_DIM, cfg.n_candidates, args.hidden, seed=seed)
    head.fit_normalization(np.vstack([s.features for s in samples]))
    curve: list = []

    def checkpoint(epoch, loss):
        curve.append(loss)
        head.save(out, cfg.candidates)
        _write_text(curve_path, "epoch,loss\n" + "".join(f"{k},{v!r}\n" for k, v in enumerate(curve)))
        print(f"epoch {epoch}: loss {loss:.6f}")

    try:
        train_ds(samples, cfg, head, args.epochs, args.lr, args.batch_size, seed, log=checkpoint)
    except NonFiniteLoss as exc:
        head.save(out, cfg.candidates)
        _write_text(curve_path, "epoch,loss\n" + "".join(f"{k},{v!r}\n" for k, v in enumerate(curve)))
        raise CLIError(f"training diverged ({exc}); last good parameters kept in {out}") from None
    return 0


def cmd_bench_cluster(args) -> int:
    if not args.out:
        raise CLIError("--out is required")
    spec = _spec_from(args.spec)
    seed = args.seed if args.seed is not None else 1000
    min_pts = args.min_points if args.min_points is not None else BENCH_MIN_POINTS
    class_cfg = spec.class_config(min_pts)
    bench = make_benchmark(args.scenes, seed=seed, spec=spec)
    grid = list(args.grid) if args.grid else [
        {"algorithm": "bfs", "radius": HEURISTIC_DEFAULT_BANDWIDTH["bfs"], "min_pts": 1},
        {"algorithm": "dbscan", "eps": HEURISTIC_DEFAULT_BANDWIDTH["dbscan"], "min_pts": DBSCAN_MIN_PTS},
    ]
    sweep = args.bandwidths if args.bandwidths else SWEEP_BANDWIDTHS
    grid += [{"algorithm": "meanshift", "bandwidth": float(b)} for b in sweep]
    head, cfg = None, None
    if args.head:
        head, cand = WeightHead.load(args.head)
        cfg = DSConfig(candidates=cand, iterations=head.iterations, final_cluster={"algorithm": "meanshift", "bandwidth": args.final_bandwidth})
    elif args.train_scenes:
        cfg = DSConfig(final_cluster={"algorithm": "meanshift", "bandwidth": args.final_bandwidth},
                       iterations=args.iterations if args.iterations is not None else 4)
        train = make_benchmark(args.train_scenes, seed=0, spec=spec)
        head, _ = train_head(train, cfg, epochs=args.epochs, learning_rate=args.lr, seed=0)
    if head is not None:
        grid.append({"algorithm": "dshift"})
    rows = bench_rows(bench, class_cfg, grid, cfg, head)
    fields = list(dict.fromkeys(k for r in rows for k in r))
    buf = _stdio.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    _write_text(args.out, buf.getvalue())
    for r in rows:
        print(f"{r['algorithm']:<10} {r['params']:<28} PQ {100 * r['pq']:6.2f}  PQ_th {100 * r['pq_th']:6.2f}  {r['runtime_s']:.2f}s")
    return 0


# ---------------------------------------------------------------- parser


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override its keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--algorithm", choices=["dshift", "meanshift", "bfs", "dbscan"], default="dshift")
    common.add_argument("--bandwidth", type=float, help="heuristic bandwidth / radius / eps")
    common.add_argument("--bandwidths", type=_floats, help="bandwidth candidates or sweep, e.g. '0.2,1.7,3.2'")
    common.add_argument("--iterations", type=int)
    common.add_argument("--min-points", type=int, help="minimum points of a valid instance")
    common.add_argument("--window", type=int, default=1, help="frames per 4D window (1 = single frame)")
    common.add_argument("--out")
    common.add_argument("--fps-count", type=int)
    common.add_argument("--final-bandwidth", type=float, default=0.65)
    common.add_argument("--classes", help="class configuration JSON")
    common.add_argument("--sequence", help="restrict to one sequence id")

    parser = argparse.ArgumentParser(prog="dsnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", parents=[common], help="write synthetic sequences in the SemanticKITTI layout")
    p.add_argument("--spec", help="scene spec JSON (default: mixed-size benchmark)")
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--sequences", type=int, default=1)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("segment", parents=[common], help="cluster things points and fuse with semantics")
    p.add_argument("--input", help="dataset root with sequences/<id>/velodyne, labels, offsets, features")
    p.add_argument("--spec", help="segment a synthetic sequence generated from this spec instead")
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--semantics", default="labels", help="label folder holding the semantic predictions")
    p.add_argument("--head", help="weight-head file for --algorithm dshift")
    p.set_defaults(func=cmd_segment)

    for name, func, text in (("eval", cmd_eval, "panoptic quality"), ("eval4d", cmd_eval4d, "LSTQ")):
        p = sub.add_parser(name, parents=[common], help=f"{text} of predictions against ground truth")
        p.add_argument("--gt", required=True)
        p.add_argument("--pred", help="prediction root (default: same as --gt)")
        p.set_defaults(func=func)

    p = sub.add_parser("train-ds", parents=[common], help="train a dynamic shifting weight head")
    p.add_argument("--input", help="dataset root (default: synthetic benchmark scenes)")
    p.add_argument("--spec")
    p.add_argument("--scenes", type=int, default=24)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--hidden", type=int, default=32)
    p.set_defaults(func=cmd_train_ds)

    p = sub.add_parser("bench-cluster", parents=[common], help="compare clustering algorithms on synthetic scenes")
    p.add_argument("--spec")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--head", help="trained weight head to include a dshift row")
    p.add_argument("--train-scenes", type=int, default=0, help="train a head inline on this many scenes")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--grid", type=json.loads, help="JSON list of heuristic specs")
    p.set_defaults(func=cmd_bench_cluster)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        config = json.loads(Path(args.config).read_text())
        if not isinstance(config, dict):
            raise CLIError(f"{args.config}: top level must be an object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(config) - known)
        if unknown:
            raise CLIError(f"{args.config}: unknown keys {unknown}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    if isinstance(args.bandwidths, str):
        args.bandwidths = _floats(args.bandwidths)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except (CLIError, FileNotFoundError, ValueError) as exc:
        print(f"dsnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
