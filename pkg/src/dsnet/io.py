"""SemanticKITTI-style readers and writers.

* ``velodyne/*.bin``: little-endian float32 quadruples ``x y z intensity``
* ``labels/*.label``: little-endian uint32, semantic in the low 16 bits
* ``poses.txt``: one row-major 3x4 ``[R | T]`` per line
* ``calib.txt``: ``key: 12 floats`` lines; ``Tr`` is velodyne -> camera
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .core import Frame, PanopticLabeling, Pose, decode_label, encode_label

POINT_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")

# rotations parsed from text files are snapped onto SO(3) within this tolerance
POSE_SNAP_TOL = 1e-4


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_points_raw(path) -> np.ndarray:
    """Exact float32 ``N x 4`` array as stored on disk."""
    data = Path(path).read_bytes()
    if len(data) % 16:
        whole = len(data) - len(data) % 16
        raise ValueError(f"{path}: truncated point record at byte offset {whole} (size {len(data)})")
    return np.frombuffer(data, dtype=POINT_DTYPE).reshape(-1, 4)


def read_points(path) -> Frame:
    return Frame(read_points_raw(path).astype(np.float64))


def write_points(path, points) -> None:
    arr = np.asarray(points)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError("points must be N x 4")
    atomic_write_bytes(path, np.ascontiguousarray(arr, dtype=POINT_DTYPE).tobytes())


def read_label_words(path, n_points=None) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) % 4:
        raise ValueError(f"{path}: size {len(data)} is not a multiple of 4")
    words = np.frombuffer(data, dtype=LABEL_DTYPE)
    if n_points is not None and len(words) != n_points:
        raise ValueError(f"{path}: {len(words)} labels for {n_points} points")
    return words


def read_labels(path, n_points=None) -> PanopticLabeling:
    return PanopticLabeling(*decode_label(read_label_words(path, n_points)))


def write_labels(path, labeling) -> None:
    """Accepts a :class:`PanopticLabeling` or an array of packed words."""
    if isinstance(labeling, PanopticLabeling):
        words = labeling.packed()
    else:
        words = np.asarray(labeling)
    atomic_write_bytes(path, np.ascontiguousarray(words, dtype=LABEL_DTYPE).tobytes())


def _parse_rows(path, expect=12):
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            vals = [float(v) for v in parts]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric pose entry") from None
        if len(vals) != expect:
            raise ValueError(f"{path}:{lineno}: expected {expect} values, got {len(vals)}")
        rows.append(vals)
    return rows


def read_pose_matrices(path) -> np.ndarray:
    """Raw ``K x 3 x 4`` pose matrices exactly as written."""
    rows = _parse_rows(path)
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3, 4)


def write_pose_matrices(path, mats) -> None:
    mats = np.asarray(mats, dtype=np.float64).reshape(-1, 12)
    text = "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in mats)
    atomic_write_bytes(path, text.encode())


def read_calib(path) -> dict:
    """Calibration entries as 4x4 homogeneous matrices keyed by name."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if ":" not in line:
            continue
        key, vals = line.split(":", 1)
        try:
            nums = [float(v) for v in vals.split()]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric calibration entry") from None
        if len(nums) != 12:
            raise ValueError(f"{path}:{lineno}: expected 12 values, got {len(nums)}")
        m = np.eye(4)
        m[:3, :4] = np.asarray(nums).reshape(3, 4)
        out[key.strip()] = m
    return out


def write_calib(path, calib: dict) -> None:
    lines = [f"{k}: " + " ".join(repr(float(v)) for v in np.asarray(m)[:3, :4].ravel()) + "\n" for k, m in calib.items()]
    atomic_write_bytes(path, "".join(lines).encode())


def snap_rotation(R: np.ndarray, tol: float = POSE_SNAP_TOL) -> np.ndarray:
    """Nearest rotation (polar decomposition) when ``R`` is within ``tol`` of SO(3)."""
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError(f"rotation is not orthonormal (error {err:.3g})")
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def read_poses(poses_path, calib_path=None) -> list:
    """Per-frame sensor poses in a common world frame.

    With a calibration file the camera poses are conjugated by ``Tr`` so the
    result maps velodyne points to world: ``Tr^-1 @ pose @ Tr``.
    """
    mats = read_pose_matrices(poses_path)
    Tr = np.eye(4)
    if calib_path is not None:
        calib = read_calib(calib_path)
        if "Tr" not in calib:
            raise ValueError(f"{calib_path}: no 'Tr' entry")
        Tr = calib["Tr"]
    Tr_inv = np.linalg.inv(Tr)
    poses = []
    for m in mats:
        h = np.eye(4)
        h[:3, :4] = m
        h = Tr_inv @ h @ Tr
        R = h[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            R = snap_rotation(R)
        poses.append(Pose(R, h[:3, 3]))
    return poses


def write_poses(path, poses) -> None:
    write_pose_matrices(path, [p.matrix()[:3, :4] for p in poses])


def read_array(path, width: int) -> np.ndarray:
    """Float32 side files (offsets ``width=3``, features ``width=8``)."""
    data = Path(path).read_bytes()
    if len(data) % (4 * width):
        raise ValueError(f"{path}: size {len(data)} is not a multiple of {4 * width}")
    return np.frombuffer(data, dtype=POINT_DTYPE).reshape(-1, width).astype(np.float64)


def write_array(path, arr) -> None:
    atomic_write_bytes(path, np.ascontiguousarray(arr, dtype=POINT_DTYPE).tobytes())


def scan_ids(directory, suffix: str) -> list:
    return sorted(p.stem for p in Path(directory).glob(f"*{suffix}"))


# SemanticKITTI directory layout: <root>/sequences/<seq>/{velodyne,labels,...}

OFFSET_WIDTH = 3


def sequence_dir(root, sequence: str) -> Path:
    return Path(root) / "sequences" / str(sequence)


def list_sequences(root) -> list:
    base = Path(root) / "sequences"
    return sorted(p.name for p in base.iterdir() if p.is_dir()) if base.is_dir() else []


def frame_name(index: int) -> str:
    return f"{index:06d}"


def write_sequence_frame(root, sequence, index, frame, labeling=None, offsets=None, features=None) -> None:
    """Write one scan (and optional labels / regression side files) in the standard layout."""
    d = sequence_dir(root, sequence)
    name = frame_name(index)
    write_points(d / "velodyne" / f"{name}.bin", frame.points)
    if labeling is not None:
        write_labels(d / "labels" / f"{name}.label", labeling)
    if offsets is not None:
        write_array(d / "offsets" / f"{name}.bin", offsets)
    if features is not None:
        write_array(d / "features" / f"{name}.bin", features)


def load_sequence(root, sequence, labels: str = "labels", side_files: bool = True, feature_dim: int = 8) -> dict:
    """Frames of one sequence with poses, labels and regression side files when present.

    Returns a dict with ``names``, ``frames`` (labels attached when
    available), ``offsets`` and ``features`` (lists, ``None`` entries when a
    side file is missing).
    """
    d = sequence_dir(root, sequence)
    names = scan_ids(d / "velodyne", ".bin")
    if not names:
        raise FileNotFoundError(f"no scans under {d / 'velodyne'}")
    poses = None
    if (d / "poses.txt").exists():
        calib = d / "calib.txt"
        poses = read_poses(d / "poses.txt", calib if calib.exists() else None)
        if len(poses) < len(names):
            raise ValueError(f"{d / 'poses.txt'}: {len(poses)} poses for {len(names)} scans")
    frames, offsets, features = [], [], []
    for k, name in enumerate(names):
        pts = read_points_raw(d / "velodyne" / f"{name}.bin").astype(np.float64)
        lab_path = d / labels / f"{name}.label"
        sem = ins = None
        if lab_path.exists():
            lab = read_labels(lab_path, len(pts))
            sem, ins = lab.semantic, lab.instance
        frames.append(Frame(pts, sem, ins, poses[k] if poses else None, k))
        for store, sub, width in ((offsets, "offsets", OFFSET_WIDTH), (features, "features", feature_dim)):
            path = d / sub / f"{name}.bin"
            if not side_files or not path.exists():
                store.append(None)
                continue
            arr = read_array(path, width)
            if len(arr) != len(pts):
                raise ValueError(f"{path}: {len(arr)} rows for {len(pts)} points")
            store.append(arr)
    return {"names": names, "frames": frames, "offsets": offsets, "features": features}
