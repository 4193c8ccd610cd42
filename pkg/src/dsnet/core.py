"""Shared domain types, the things/stuff class registry and the packed label codec."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

SEMANTIC_BITS = 16
FIELD_MAX = (1 << SEMANTIC_BITS) - 1

THINGS = "things"
STUFF = "stuff"
IGNORE = "ignore"
_KINDS = (THINGS, STUFF, IGNORE)

ORTHO_TOL = 1e-9


def encode_label(semantic, instance):
    """Pack semantic (low 16 bits) and instance (high 16 bits) into uint32.

    Works on python ints and on integer arrays alike.
    """
    sem = np.asarray(semantic, dtype=np.int64)
    ins = np.asarray(instance, dtype=np.int64)
    if np.any(sem < 0) or np.any(sem > FIELD_MAX):
        raise OverflowError("semantic label does not fit in 16 bits")
    if np.any(ins < 0) or np.any(ins > FIELD_MAX):
        raise OverflowError("instance id does not fit in 16 bits")
    packed = ((ins << SEMANTIC_BITS) | sem).astype(np.uint32)
    if packed.ndim == 0:
        return int(packed)
    return packed


def decode_label(packed):
    """Inverse of :func:`encode_label`; returns ``(semantic, instance)``."""
    arr = np.asarray(packed).astype(np.uint32)
    sem = arr & np.uint32(FIELD_MAX)
    ins = arr >> np.uint32(SEMANTIC_BITS)
    if arr.ndim == 0:
        return int(sem), int(ins)
    return sem.astype(np.int64), ins.astype(np.int64)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid ego pose. A sensor row-vector ``p`` maps to world as ``p R^-1 + T``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        T = np.array(self.translation, dtype=np.float64).reshape(3)
        check_rotation(R)
        if not np.all(np.isfinite(T)):
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, mat) -> "Pose":
        """Build from a 3x4 or 4x4 homogeneous ``[R | T]`` matrix."""
        m = np.asarray(mat, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation))

    __hash__ = None

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out


def check_rotation(R, tol: float = ORTHO_TOL) -> None:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")


@dataclass(frozen=True)
class ClassInfo:
    id: int
    name: str
    kind: str


@dataclass(frozen=True)
class ClassConfig:
    classes: tuple
    min_instance_points: int = 50

    def __post_init__(self):
        infos = tuple(c if isinstance(c, ClassInfo) else ClassInfo(*c) for c in self.classes)
        ids = [c.id for c in infos]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate class ids")
        for c in infos:
            if c.kind not in _KINDS:
                raise ValueError(f"unknown class kind {c.kind!r}")
        if not any(c.kind == THINGS for c in infos):
            raise ValueError("at least one things class is required")
        if self.min_instance_points < 1:
            raise ValueError("min_instance_points must be positive")
        object.__setattr__(self, "classes", infos)

    def ids(self, kind: Optional[str] = None) -> list:
        return [c.id for c in self.classes if kind is None or c.kind == kind]

    @property
    def things_ids(self) -> list:
        return self.ids(THINGS)

    @property
    def stuff_ids(self) -> list:
        return self.ids(STUFF)

    @property
    def ignore_ids(self) -> list:
        return self.ids(IGNORE)

    def kind(self, class_id: int) -> str:
        for c in self.classes:
            if c.id == class_id:
                return c.kind
        return IGNORE

    def name(self, class_id: int) -> str:
        for c in self.classes:
            if c.id == class_id:
                return c.name
        return str(class_id)

    def is_things(self, semantic) -> np.ndarray:
        return np.isin(np.asarray(semantic), self.things_ids)

    def is_ignored(self, semantic) -> np.ndarray:
        """Points whose class is ``ignore`` or not registered at all."""
        return ~np.isin(np.asarray(semantic), self.ids(THINGS) + self.ids(STUFF))

    def to_dict(self) -> dict:
        return {
            "classes": [[c.id, c.name, c.kind] for c in self.classes],
            "min_instance_points": self.min_instance_points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassConfig":
        return cls(tuple(tuple(c) for c in d["classes"]), int(d.get("min_instance_points", 50)))


@dataclass(frozen=True)
class PanopticLabeling:
    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        sem = np.asarray(self.semantic, dtype=np.int64).reshape(-1)
        ins = np.asarray(self.instance, dtype=np.int64).reshape(-1)
        if sem.shape != ins.shape:
            raise ValueError("semantic and instance arrays differ in length")
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "instance", ins)

    def __len__(self):
        return len(self.semantic)

    def packed(self) -> np.ndarray:
        return encode_label(self.semantic, self.instance)

    @classmethod
    def from_packed(cls, words) -> "PanopticLabeling":
        return cls(*decode_label(np.asarray(words, dtype=np.uint32)))


@dataclass
class Frame:
    """One LiDAR scan.

    ``points`` is ``N x 4`` (x, y, z, intensity). ``instance`` uses 0 for
    stuff / no instance.
    """

    points: np.ndarray
    semantic: Optional[np.ndarray] = None
    instance: Optional[np.ndarray] = None
    pose: Optional[Pose] = None
    timestamp_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] not in (3, 4):
            pts = pts.reshape(-1, 4)
        if pts.shape[1] == 3:
            pts = np.hstack([pts, np.zeros((len(pts), 1))])
        if not np.all(np.isfinite(pts)):
            raise ValueError("point attributes must be finite")
        if np.any(pts[:, 3] < 0):
            raise ValueError("intensity must be non-negative")
        self.points = pts
        n = len(pts)
        for name in ("semantic", "instance"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.int64).reshape(-1)
                if len(arr) != n:
                    raise ValueError(f"{name} length {len(arr)} != {n} points")
                setattr(self, name, arr)

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def labeling(self) -> PanopticLabeling:
        if self.semantic is None or self.instance is None:
            raise ValueError("frame carries no labels")
        return PanopticLabeling(self.semantic, self.instance)


def relabel_contiguous(ids: Sequence[int] | np.ndarray) -> np.ndarray:
    """Map nonzero ids to 1..K in order of first appearance; 0 stays 0."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros_like(ids)
    nz = ids != 0
    if not nz.any():
        return out
    uniq, first = np.unique(ids[nz], return_index=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[order] = np.arange(1, len(uniq) + 1)
    out[nz] = rank[np.searchsorted(uniq, ids[nz])]
    return out


def default_class_config(min_instance_points: int = 50) -> ClassConfig:
    """Class registry used by the synthetic generator."""
    return ClassConfig(
        (
            (0, "unlabeled", IGNORE),
            (1, "person", THINGS),
            (2, "car", THINGS),
            (3, "truck", THINGS),
            (9, "road", STUFF),
            (15, "vegetation", STUFF),
        ),
        min_instance_points,
    )


def as_xyz(points: Iterable) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape[1] == 4:
        arr = arr[:, :3]
    return arr
