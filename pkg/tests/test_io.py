import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsnet.core import PanopticLabeling, Pose
from dsnet.geom import align_frame
from dsnet.io import (
    read_calib,
    read_labels,
    read_pose_matrices,
    read_points,
    read_points_raw,
    read_poses,
    write_calib,
    write_labels,
    write_points,
    write_pose_matrices,
    write_poses,
)


def test_points_fixture(tmp_path):
    p = tmp_path / "a.bin"
    p.write_bytes(struct.pack("<4f", 1, 2, 3, 0.5))
    frame = read_points(p)
    np.testing.assert_array_equal(frame.points, [[1, 2, 3, 0.5]])
    (tmp_path / "e.bin").write_bytes(b"")
    assert len(read_points(tmp_path / "e.bin").points) == 0


def test_points_truncated_reports_offset(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(bytes(16 * 3 + 5))
    with pytest.raises(ValueError, match="48"):
        read_points_raw(p)


@settings(max_examples=30, deadline=None)
@given(st.binary(max_size=16 * 64).map(lambda b: b[: len(b) // 16 * 16]))
def test_points_bit_exact_on_arbitrary_payloads(tmp_path_factory, payload):
    d = tmp_path_factory.mktemp("pts")
    (d / "in.bin").write_bytes(payload)
    write_points(d / "out.bin", read_points_raw(d / "in.bin"))
    assert (d / "out.bin").read_bytes() == payload


def test_labels_examples(tmp_path):
    p = tmp_path / "x.label"
    p.write_bytes(struct.pack("<I", 196618))
    lab = read_labels(p)
    assert (lab.semantic[0], lab.instance[0]) == (10, 3)
    p.write_bytes(bytes(12))
    lab = read_labels(p, n_points=3)
    assert np.all(lab.semantic == 0) and np.all(lab.instance == 0)
    with pytest.raises(ValueError):
        read_labels(p, n_points=4)
    p.write_bytes(bytes(5))
    with pytest.raises(ValueError):
        read_labels(p)


@settings(max_examples=30, deadline=None)
@given(st.binary(max_size=4 * 256).map(lambda b: b[: len(b) // 4 * 4]))
def test_labels_bit_exact_on_arbitrary_payloads(tmp_path_factory, payload):
    d = tmp_path_factory.mktemp("lab")
    (d / "in.label").write_bytes(payload)
    write_labels(d / "out.label", read_labels(d / "in.label"))
    assert (d / "out.label").read_bytes() == payload


def test_label_write_accepts_labeling(tmp_path):
    lab = PanopticLabeling([1, 9, 0], [4, 0, 0])
    write_labels(tmp_path / "l.label", lab)
    back = read_labels(tmp_path / "l.label")
    np.testing.assert_array_equal(back.semantic, lab.semantic)
    np.testing.assert_array_equal(back.instance, lab.instance)


def test_pose_lines(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 2.5 0 1 0 -1 0 0 1 3\n")
    poses = read_poses(p)
    assert poses[0] == Pose.identity()
    np.testing.assert_array_equal(poses[1].translation, [2.5, -1, 3])
    P = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_allclose(align_frame(P, poses[1], poses[1]), P, atol=1e-12)


def test_pose_malformed_line_number(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(ValueError, match=":2:"):
        read_poses(p)
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 x\n")
    with pytest.raises(ValueError, match=":1:"):
        read_poses(p)


def random_rigid(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.linalg.det(q))
    m = np.eye(4)
    m[:3, :3] = q
    m[:3, 3] = rng.normal(scale=50, size=3)
    return m


@pytest.mark.parametrize("seed", range(5))
def test_pose_matrices_bit_exact(tmp_path, seed):
    rng = np.random.default_rng(seed)
    mats = np.stack([random_rigid(rng)[:3] for _ in range(7)])
    write_pose_matrices(tmp_path / "p.txt", mats)
    back = read_pose_matrices(tmp_path / "p.txt")
    assert back.tobytes() == mats.tobytes()
    write_pose_matrices(tmp_path / "q.txt", back)
    assert (tmp_path / "q.txt").read_bytes() == (tmp_path / "p.txt").read_bytes()


def test_write_poses_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    poses = [Pose.from_matrix(random_rigid(rng)) for _ in range(4)]
    write_poses(tmp_path / "poses.txt", poses)
    back = read_poses(tmp_path / "poses.txt")
    for a, b in zip(poses, back):
        assert a.rotation.tobytes() == b.rotation.tobytes()
        assert a.translation.tobytes() == b.translation.tobytes()


def test_calibration_conjugates_poses(tmp_path):
    rng = np.random.default_rng(4)
    Tr = random_rigid(rng)
    cams = [random_rigid(rng) for _ in range(2)]
    write_pose_matrices(tmp_path / "poses.txt", [c[:3] for c in cams])
    write_calib(tmp_path / "calib.txt", {"P0": np.eye(4), "Tr": Tr})
    np.testing.assert_array_equal(read_calib(tmp_path / "calib.txt")["Tr"], Tr)
    poses = read_poses(tmp_path / "poses.txt", tmp_path / "calib.txt")
    pts = rng.normal(scale=10, size=(20, 3))
    # velodyne frame a -> camera a -> world camera -> camera b -> velodyne frame b
    h = np.hstack([pts, np.ones((20, 1))])
    expect = (np.linalg.inv(Tr) @ np.linalg.inv(cams[1]) @ cams[0] @ Tr @ h.T).T[:, :3]
    np.testing.assert_allclose(align_frame(pts, poses[0], poses[1]), expect, atol=1e-9)


def test_calib_without_tr(tmp_path):
    (tmp_path / "poses.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    write_calib(tmp_path / "calib.txt", {"P0": np.eye(4)})
    with pytest.raises(ValueError):
        read_poses(tmp_path / "poses.txt", tmp_path / "calib.txt")
