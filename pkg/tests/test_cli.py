import csv
import json
import shutil

import numpy as np
import pytest

from dsnet import cli
from dsnet.core import ClassConfig, Frame, PanopticLabeling
from dsnet.dshift import NonFiniteLoss, WeightHead
from dsnet.io import frame_name, read_labels, scan_ids, sequence_dir, write_labels, write_sequence_frame
from dsnet.metrics import panoptic_quality

CFG = ClassConfig(((0, "unlabeled", "ignore"), (1, "car", "things"), (2, "person", "things"), (9, "road", "stuff")))


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert run("synth-gen", "--out", root, "--frames", 3, "--sequences", 2, "--seed", 5, "--min-points", 5) == 0
    return root


def copy_labels_as_predictions(root, dst):
    for seq in ("00", "01"):
        src = sequence_dir(root, seq) / "labels"
        out = sequence_dir(dst, seq) / "predictions"
        out.mkdir(parents=True, exist_ok=True)
        for p in src.iterdir():
            shutil.copy(p, out / p.name)


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_config_file_then_flags(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"algorithm": "bfs", "bandwidth": 0.5, "window": 2, "bandwidths": [0.2, 1.0]}))
    args = cli.parse_args(["segment", "--config", str(cfg), "--algorithm", "meanshift"])
    assert (args.algorithm, args.bandwidth, args.window, args.bandwidths) == ("meanshift", 0.5, 2, [0.2, 1.0])
    args = cli.parse_args(["segment", "--bandwidths", "0.3, 1.5,2"])
    assert args.bandwidths == [0.3, 1.5, 2.0]


def test_config_unknown_key_fails(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text('{"bogus": 1}')
    assert run("eval", "--gt", tmp_path, "--config", cfg) == 1
    assert "bogus" in capsys.readouterr().err


def test_synth_gen_layout_and_determinism(tmp_path, dataset):
    again = tmp_path / "again"
    assert run("synth-gen", "--out", again, "--frames", 3, "--sequences", 2, "--seed", 5, "--min-points", 5) == 0
    assert tree_bytes(again) == tree_bytes(dataset)
    d = sequence_dir(dataset, "01")
    for sub, suffix in (("velodyne", ".bin"), ("labels", ".label"), ("offsets", ".bin"), ("features", ".bin")):
        assert scan_ids(d / sub, suffix) == ["000000", "000001", "000002"]
    assert (d / "poses.txt").read_text().count("\n") == 3
    assert ClassConfig.from_dict(json.loads((dataset / "classes.json").read_text())).min_instance_points == 5


def test_eval_perfect_predictions(tmp_path, dataset, capsys):
    copy_labels_as_predictions(dataset, tmp_path)
    assert run("eval", "--gt", dataset, "--pred", tmp_path, "--out", tmp_path / "rep.json") == 0
    assert "PQ" in capsys.readouterr().out
    assert json.loads((tmp_path / "rep.json").read_text())["pq"] == 1.0
    assert run("eval4d", "--gt", dataset, "--pred", tmp_path, "--out", tmp_path / "rep4d.json") == 0
    assert json.loads((tmp_path / "rep4d.json").read_text())["lstq"] == 1.0


def test_eval_hand_example(tmp_path):
    gt = PanopticLabeling([1, 1, 1, 1, 1, 2, 2, 2], [1, 1, 1, 1, 1, 2, 2, 2])
    pred = PanopticLabeling([1, 1, 1, 2, 2, 1, 1, 1], [1, 1, 1, 0, 0, 2, 2, 2])
    d = sequence_dir(tmp_path, "00")
    write_labels(d / "labels" / "000000.label", gt)
    write_labels(d / "predictions" / "000000.label", pred)
    (tmp_path / "classes.json").write_text(json.dumps(CFG.to_dict()))
    assert run("eval", "--gt", tmp_path, "--out", tmp_path / "rep.json") == 0
    car = json.loads((tmp_path / "rep.json").read_text())["per_class"]["car"]
    assert car["pq"] == pytest.approx(0.4, abs=1e-12)
    assert car["sq"] == pytest.approx(0.6, abs=1e-12)


def test_eval4d_corrupted_ids_score_lower(tmp_path, dataset):
    copy_labels_as_predictions(dataset, tmp_path)
    path = sequence_dir(tmp_path, "00") / "predictions" / "000001.label"
    lab = read_labels(path)
    ids = np.unique(lab.instance[lab.instance != 0])
    swapped = lab.instance.copy()
    swapped[lab.instance == ids[0]], swapped[lab.instance == ids[1]] = ids[1], ids[0]
    write_labels(path, PanopticLabeling(lab.semantic, swapped))
    assert run("eval4d", "--gt", dataset, "--pred", tmp_path, "--out", tmp_path / "r.json") == 0
    assert json.loads((tmp_path / "r.json").read_text())["lstq"] < 1.0


def test_eval_frame_mismatch_lists_frames(tmp_path, dataset, capsys):
    copy_labels_as_predictions(dataset, tmp_path)
    (sequence_dir(tmp_path, "01") / "predictions" / "000002.label").unlink()
    assert run("eval", "--gt", dataset, "--pred", tmp_path) == 1
    err = capsys.readouterr().err
    assert "01" in err and "000002" in err
    short = sequence_dir(tmp_path, "00") / "predictions" / "000001.label"
    short.write_bytes(short.read_bytes()[:-8])
    copy = sequence_dir(tmp_path, "01") / "predictions"
    shutil.copy(sequence_dir(dataset, "01") / "labels" / "000002.label", copy / "000002.label")
    assert run("eval", "--gt", dataset, "--pred", tmp_path) == 1
    assert "000001" in capsys.readouterr().err


def test_segment_meanshift_baseline(tmp_path, dataset):
    out = tmp_path / "pred"
    assert run("segment", "--input", dataset, "--algorithm", "meanshift", "--bandwidth", 1.2, "--out", out) == 0
    for seq in ("00", "01"):
        gt_names = scan_ids(sequence_dir(dataset, seq) / "labels", ".label")
        assert scan_ids(sequence_dir(out, seq) / "predictions", ".label") == gt_names
    assert run("eval", "--gt", dataset, "--pred", out, "--out", tmp_path / "rep.json") == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert 0.0 < rep["pq"] <= 1.0


def test_segment_empty_scene(tmp_path):
    write_sequence_frame(tmp_path, "00", 0, Frame(np.zeros((0, 4)), [], []), PanopticLabeling([], []),
                         np.zeros((0, 3)), np.zeros((0, 8)))
    assert run("segment", "--input", tmp_path, "--algorithm", "meanshift", "--out", tmp_path) == 0
    pred = sequence_dir(tmp_path, "00") / "predictions" / "000000.label"
    assert pred.exists() and pred.read_bytes() == b""


def test_segment_missing_inputs(tmp_path, dataset, capsys):
    root = tmp_path / "copy"
    shutil.copytree(dataset, root)
    (sequence_dir(root, "00") / "offsets" / "000001.bin").unlink()
    assert run("segment", "--input", root, "--algorithm", "meanshift", "--out", tmp_path / "o") == 1
    assert "000001" in capsys.readouterr().err
    assert run("segment", "--input", root, "--out", tmp_path / "o") == 1
    assert "--head" in capsys.readouterr().err
    assert run("segment", "--input", root, "--semantics", "nowhere", "--algorithm", "bfs", "--out", tmp_path / "o") == 1


def test_segment_window_writes_tracks(tmp_path, dataset, benchmark_model):
    out = tmp_path / "pred"
    assert run("segment", "--input", dataset, "--window", 2, "--head", benchmark_model.path, "--out", out) == 0
    tracks = json.loads((sequence_dir(out, "00") / "tracks.json").read_text())["tracks"]
    assert tracks and all(set(t) == {"class", "frames", "points"} for t in tracks.values())
    assert run("eval4d", "--gt", dataset, "--pred", out, "--out", tmp_path / "r.json") == 0
    assert 0.0 < json.loads((tmp_path / "r.json").read_text())["lstq"] <= 1.0


def test_segment_synthetic_dshift_matches_eval(tmp_path, benchmark_model):
    out = tmp_path / "syn"
    assert run("segment", "--frames", 2, "--seed", 1000, "--min-points", 5, "--head", benchmark_model.path, "--out", out) == 0
    assert run("eval", "--gt", out, "--out", tmp_path / "rep.json") == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    d = sequence_dir(out, "00")
    names = scan_ids(d / "labels", ".label")
    direct = panoptic_quality([read_labels(d / "predictions" / f"{n}.label") for n in names],
                              [read_labels(d / "labels" / f"{n}.label") for n in names],
                              ClassConfig.from_dict(json.loads((out / "classes.json").read_text())))
    assert rep["pq"] == direct["pq"]
    assert rep["pq_th"] > 0.9


def test_train_ds_outputs_and_determinism(tmp_path):
    common = ["train-ds", "--scenes", 1, "--epochs", 2, "--fps-count", 200, "--seed", 3]
    assert run(*common, "--out", tmp_path / "a.bin") == 0
    assert run(*common, "--out", tmp_path / "b.bin") == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    rows = list(csv.DictReader((tmp_path / "a.bin.loss.csv").open()))
    assert [r["epoch"] for r in rows] == ["0", "1"]
    head, cand = WeightHead.load(tmp_path / "a.bin")
    assert cand == (0.2, 1.7, 3.2) and head.iterations == 4


def test_train_ds_zero_lr_flat_curve(tmp_path):
    assert run("train-ds", "--scenes", 1, "--epochs", 3, "--fps-count", 200, "--lr", 0, "--out", tmp_path / "h.bin") == 0
    losses = [float(r["loss"]) for r in csv.DictReader((tmp_path / "h.bin.loss.csv").open())]
    assert losses[0] == losses[1] == losses[2]


def test_train_ds_fifty_epochs_lowers_loss(tmp_path):
    argv = ["train-ds", "--scenes", 2, "--epochs", 50, "--fps-count", 150, "--lr", 0.002, "--out", tmp_path / "h.bin"]
    assert run(*argv) == 0
    losses = [float(r["loss"]) for r in csv.DictReader((tmp_path / "h.bin.loss.csv").open())]
    assert len(losses) == 50 and losses[-1] < losses[0]


def test_train_ds_divergence_keeps_checkpoint(tmp_path, monkeypatch, capsys):
    def diverge(samples, cfg, head, epochs, lr, batch, seed, log=None):
        log(0, 1.5)
        raise NonFiniteLoss("loss is nan")

    monkeypatch.setattr(cli, "train_ds", diverge)
    assert run("train-ds", "--scenes", 1, "--fps-count", 100, "--out", tmp_path / "h.bin") == 1
    assert "diverged" in capsys.readouterr().err
    WeightHead.load(tmp_path / "h.bin")
    assert (tmp_path / "h.bin.loss.csv").read_text() == "epoch,loss\n0,1.5\n"


def test_bench_cluster_rows(tmp_path):
    grid = json.dumps([{"algorithm": "bfs", "radius": 0.3, "min_pts": 1},
                       {"algorithm": "dbscan", "eps": 0.3, "min_pts": 3}])
    out = tmp_path / "b.csv"
    assert run("bench-cluster", "--scenes", 2, "--grid", grid, "--bandwidths", "0.65", "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["algorithm"] for r in rows] == ["bfs", "dbscan", "meanshift"]
    assert {"pq", "pq_th", "runtime_s", "pq_person", "pq_truck"} <= set(rows[0])


def test_bench_cluster_dshift_best_and_sweep_pattern(tmp_path, benchmark_model):
    out = tmp_path / "b.csv"
    assert run("bench-cluster", "--scenes", 10, "--head", benchmark_model.path, "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) >= 4 and {r["algorithm"] for r in rows} == {"bfs", "dbscan", "meanshift", "dshift"}
    best = max(rows, key=lambda r: float(r["pq_th"]))
    assert best["algorithm"] == "dshift"
    sweep = [r for r in rows if r["algorithm"] == "meanshift"]
    peak = {c: float(max(sweep, key=lambda r: float(r[f"pq_{c}"]))["params"].split("=")[1]) for c in ("person", "truck")}
    assert peak["person"] < peak["truck"]
