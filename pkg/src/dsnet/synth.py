"""Synthetic LiDAR scenes and sequences with simulated center regressions.

Instances are boxes whose point count follows a range-dependent density
curve. Simulated regressed centers scatter around the tight-box center in
elongated strips aligned with each instance's heading, with spread
proportional to the instance length.

Feature layout (``FEATURE_DIM = 8`` columns, one row per things point):

====  ==========================================================
0     sensor range of the point (m)
1     ``log1p`` of the number of things points within 1 m
2     RMS distance of points within 2 m to their centroid (m)
3     norm of the regressed offset ``||C - P||`` (m)
4     RMS spread of regressed centers of points within 1 m (m)
5     nominal length of the point's semantic class (m)
6     z coordinate (m)
7     intensity
====  ==========================================================
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ClassConfig, Frame, Pose, STUFF, THINGS, IGNORE
from .geom import pairwise_within, tight_box_center

FEATURE_DIM = 8


@dataclass
class ClassTemplate:
    name: str
    class_id: int
    extent: tuple  # (min, max) length in m
    width_ratio: float = 0.5
    height: float = 1.5
    count: tuple = (1, 3)  # groups per scene
    group_size: tuple = (1, 1)
    group_spacing: tuple = (1.0, 1.5)
    speed: tuple = (0.0, 0.0)  # m / frame

    @property
    def nominal_extent(self) -> float:
        return 0.5 * (self.extent[0] + self.extent[1])


@dataclass
class NoiseModel:
    elongation: float = 0.2
    jitter: float = 0.05


@dataclass
class SceneSpec:
    templates: list = field(default_factory=lambda: default_templates())
    sensor_range: tuple = (5.0, 40.0)
    density_curve: list = field(default_factory=lambda: [[0.0, 20.0], [10.0, 20.0], [20.0, 10.0], [40.0, 4.0], [80.0, 1.5]])
    noise: NoiseModel = field(default_factory=NoiseModel)
    road_points: int = 1500
    vegetation_clumps: int = 4
    ego_speed: float = 0.0  # m / frame
    ego_yaw_rate: float = 0.0  # rad / frame
    seed: int = 0

    def __post_init__(self):
        self.templates = [t if isinstance(t, ClassTemplate) else ClassTemplate(**t) for t in self.templates]
        for t in self.templates:
            for name in ("extent", "count", "group_size", "group_spacing", "speed"):
                setattr(t, name, tuple(getattr(t, name)))
            if min(t.extent) <= 0:
                raise ValueError(f"template {t.name}: extents must be positive")
        if isinstance(self.noise, dict):
            self.noise = NoiseModel(**self.noise)
        curve = np.asarray(self.density_curve, dtype=np.float64)
        if curve.ndim != 2 or curve.shape[1] != 2 or len(curve) < 1:
            raise ValueError("density curve must be a list of (range, density) knots")
        if np.any(curve[:, 1] < 0) or np.any(np.diff(curve[:, 1]) > 0) or np.any(np.diff(curve[:, 0]) <= 0):
            raise ValueError("density curve must be non-negative, non-increasing, with increasing ranges")
        if np.all(curve[:, 1] == 0):
            raise ValueError("density curve is zero at every range")
        self.sensor_range = tuple(self.sensor_range)

    def density(self, r) -> np.ndarray:
        """Points per m^2 of visible surface at range ``r``."""
        c = np.asarray(self.density_curve, dtype=np.float64)
        return np.interp(r, c[:, 0], c[:, 1])

    def class_config(self, min_instance_points: int = 50) -> ClassConfig:
        classes = [(0, "unlabeled", IGNORE)]
        classes += [(t.class_id, t.name, THINGS) for t in self.templates]
        classes += [(ROAD, "road", STUFF), (VEGETATION, "vegetation", STUFF)]
        return ClassConfig(tuple(classes), min_instance_points)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


ROAD = 9
VEGETATION = 15


def default_templates() -> list:
    """Small person-like, medium car-like and large truck-like classes."""
    return [
        ClassTemplate("person", 1, (0.4, 0.6), 1.0, 1.7, (2, 3), (2, 4), (1.3, 1.6), (0.0, 0.3)),
        ClassTemplate("car", 2, (1.8, 2.4), 0.5, 1.5, (3, 5), (1, 1), (0.0, 0.0), (0.0, 1.5)),
        ClassTemplate("truck", 3, (8.0, 12.0), 0.25, 3.0, (1, 2), (1, 1), (0.0, 0.0), (0.0, 1.0)),
    ]


@dataclass
class Instance:
    id: int
    class_id: int
    template: ClassTemplate
    length: float
    width: float
    height: float
    position: np.ndarray  # box base center, world frame at frame 0
    heading: float
    velocity: np.ndarray  # m / frame, world frame

    @property
    def axis(self) -> np.ndarray:
        return np.array([np.cos(self.heading), np.sin(self.heading), 0.0])

    def position_at(self, t: int) -> np.ndarray:
        return self.position + t * self.velocity

    def visible_area(self) -> float:
        return (self.length + self.width) * self.height + self.length * self.width


@dataclass
class Scene:
    frame: Frame
    instances: dict  # id -> Instance
    box_centers: dict  # id -> tight-box center of the sampled points (sensor frame)
    spec: SceneSpec
    axes: dict = field(default_factory=dict)  # id -> principal axis in sensor frame

    @property
    def things_mask(self) -> np.ndarray:
        return self.frame.instance != 0

    def instance_extent(self, k: int) -> float:
        return self.instances[k].length


def _place_instances(spec: SceneSpec, rng: np.random.Generator) -> list:
    placed = []
    next_id = 1

    def free(pos, radius):
        return all(np.linalg.norm(pos[:2] - q.position[:2]) > radius + max(q.length, q.width) / 2 + 0.3 for q in placed)

    rmin, rmax = spec.sensor_range
    for tpl in spec.templates:
        n_groups = int(rng.integers(tpl.count[0], tpl.count[1] + 1))
        for _ in range(n_groups):
            size = int(rng.integers(tpl.group_size[0], tpl.group_size[1] + 1))
            for _attempt in range(100):
                r = rng.uniform(rmin, rmax)
                az = rng.uniform(-np.pi, np.pi)
                anchor = np.array([r * np.cos(az), r * np.sin(az), 0.0])
                heading = rng.uniform(-np.pi, np.pi)
                spacing = rng.uniform(*tpl.group_spacing)
                side = np.array([-np.sin(heading), np.cos(heading), 0.0])
                members = []
                for k in range(size):
                    length = rng.uniform(*tpl.extent)
                    pos = anchor + (k - (size - 1) / 2) * spacing * side
                    members.append((pos, length))
                if all(free(pos, max(length, length * tpl.width_ratio) / 2) for pos, length in members):
                    break
            else:
                continue
            speed = rng.uniform(*tpl.speed)
            for pos, length in members:
                placed.append(
                    Instance(
                        next_id, tpl.class_id, tpl, length, length * tpl.width_ratio, tpl.height,
                        pos, heading, speed * np.array([np.cos(heading), np.sin(heading), 0.0]),
                    )
                )
                next_id += 1
    return placed


def _sample_box(inst: Instance, base: np.ndarray, n: int, rng) -> np.ndarray:
    local = rng.uniform(-0.5, 0.5, (n, 3)) * np.array([inst.length, inst.width, inst.height])
    local[:, 2] += inst.height / 2
    c, s = np.cos(inst.heading), np.sin(inst.heading)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + base


def _stuff_points(spec: SceneSpec, rng, origin=np.zeros(3)):
    rmin, rmax = 2.0, spec.sensor_range[1] + 5.0
    # ground density falls off with range: sample range from a 1/r-weighted law
    u = rng.uniform(size=spec.road_points)
    r = rmin * (rmax / rmin) ** u
    az = rng.uniform(-np.pi, np.pi, spec.road_points)
    road = np.stack([r * np.cos(az), r * np.sin(az), rng.normal(0.0, 0.02, spec.road_points)], axis=1)
    veg = []
    for _ in range(spec.vegetation_clumps):
        rr = rng.uniform(*spec.sensor_range)
        a = rng.uniform(-np.pi, np.pi)
        n = max(1, int(spec.density(rr) * 6))
        veg.append(np.array([rr * np.cos(a), rr * np.sin(a), 1.5]) + rng.normal(0, [1.5, 1.5, 0.7], (n, 3)))
    veg = np.vstack(veg) if veg else np.zeros((0, 3))
    return road + origin, veg + origin


def _render(instances, spec: SceneSpec, rng, t: int, ego: Pose):
    """World-frame instances at frame ``t`` seen from ``ego``; returns sensor-frame arrays."""
    xyz, sem, ins = [], [], []
    for inst in instances:
        base = inst.position_at(t)
        r = np.linalg.norm(base[:2] - ego.translation[:2])
        n = max(1, int(rng.poisson(spec.density(r) * inst.visible_area())))
        world = _sample_box(inst, base, n, rng)
        xyz.append((world - ego.translation) @ ego.rotation)
        sem.append(np.full(n, inst.class_id))
        ins.append(np.full(n, inst.id))
    road, veg = _stuff_points(spec, rng)
    xyz += [road, veg]
    sem += [np.full(len(road), ROAD), np.full(len(veg), VEGETATION)]
    ins += [np.zeros(len(road), dtype=np.int64), np.zeros(len(veg), dtype=np.int64)]
    xyz = np.vstack(xyz)
    intensity = rng.uniform(0.0, 1.0, len(xyz))
    return np.hstack([xyz, intensity[:, None]]), np.concatenate(sem), np.concatenate(ins)


def _axes_in_sensor(instances, ego: Pose) -> dict:
    return {inst.id: inst.axis @ ego.rotation for inst in instances}


def generate_scene(spec: SceneSpec, seed: Optional[int] = None) -> Scene:
    """One labeled frame; deterministic for a fixed seed."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    instances = _place_instances(spec, rng)
    ego = Pose.identity()
    pts, sem, ins = _render(instances, spec, rng, 0, ego)
    frame = Frame(pts, sem, ins, ego, 0)
    centers = {k: tight_box_center(pts[ins == k, :3]) for k in np.unique(ins[ins != 0])}
    return Scene(frame, {i.id: i for i in instances}, {int(k): v for k, v in centers.items()}, spec,
                 _axes_in_sensor(instances, ego))


def ego_pose(spec: SceneSpec, t: int) -> Pose:
    yaw = spec.ego_yaw_rate * t
    if spec.ego_yaw_rate:
        radius = spec.ego_speed / spec.ego_yaw_rate
        T = np.array([radius * np.sin(yaw), radius * (1 - np.cos(yaw)), 0.0])
    else:
        T = np.array([spec.ego_speed * t, 0.0, 0.0])
    c, s = np.cos(yaw), np.sin(yaw)
    return Pose(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), T)


@dataclass
class SyntheticSequence:
    frames: list
    instances: dict
    spec: SceneSpec
    axes: list  # per frame: id -> axis in that frame's sensor coordinates


def generate_sequence(spec: SceneSpec, frames: int, seed: Optional[int] = None) -> SyntheticSequence:
    """Frames with consistent track ids, moving instances and a smooth ego trajectory."""
    if frames < 1:
        raise ValueError("need at least one frame")
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    instances = _place_instances(spec, rng)
    out, axes = [], []
    for t in range(frames):
        frame_rng = rng if t == 0 else np.random.default_rng([seed, t])
        ego = ego_pose(spec, t)
        pts, sem, ins = _render(instances, spec, frame_rng, t, ego)
        out.append(Frame(pts, sem, ins, ego, t))
        axes.append(_axes_in_sensor(instances, ego))
    return SyntheticSequence(out, {i.id: i for i in instances}, spec, axes)


def regress_centers(points, ids, targets: dict, axes: dict, extents: dict, noise: NoiseModel, rng) -> np.ndarray:
    """Targets plus strip noise along each instance axis and isotropic jitter."""
    P = np.asarray(points, dtype=np.float64)[:, :3]
    ids = np.asarray(ids)
    C = np.empty_like(P)
    for k in np.unique(ids):
        sel = ids == k
        n = int(sel.sum())
        C[sel] = targets[int(k)]
        if noise.elongation:
            along = rng.normal(0.0, noise.elongation * extents[int(k)], n)
            C[sel] += along[:, None] * np.asarray(axes[int(k)])[None, :]
    if noise.jitter:
        C += rng.normal(0.0, noise.jitter, C.shape)
    return C


def point_features(points, centers, semantic, intensity, class_extent: dict) -> np.ndarray:
    """Per-point feature rows; see the module docstring for the column layout."""
    P = np.asarray(points, dtype=np.float64)[:, :3]
    C = np.asarray(centers, dtype=np.float64)
    n = len(P)
    F = np.zeros((n, FEATURE_DIM))
    if n == 0:
        return F
    F[:, 0] = np.linalg.norm(P, axis=1)
    i, j, _ = pairwise_within(P, 2.0)
    d = np.sqrt(np.sum((P[i] - P[j]) ** 2, axis=1))
    near = d <= 1.0
    cnt1 = np.bincount(i[near], minlength=n).astype(np.float64)
    F[:, 1] = np.log1p(cnt1)
    cnt2 = np.bincount(i, minlength=n).astype(np.float64)
    mean2 = np.stack([np.bincount(i, P[j, k], minlength=n) for k in range(3)], 1) / cnt2[:, None]
    sq2 = np.bincount(i, np.sum(P[j] ** 2, axis=1), minlength=n) / cnt2
    F[:, 2] = np.sqrt(np.maximum(sq2 - np.sum(mean2 ** 2, axis=1), 0.0))
    F[:, 3] = np.linalg.norm(C - P, axis=1)
    ii, jj = i[near], j[near]
    meanc = np.stack([np.bincount(ii, C[jj, k], minlength=n) for k in range(3)], 1) / cnt1[:, None]
    sqc = np.bincount(ii, np.sum(C[jj] ** 2, axis=1), minlength=n) / cnt1
    F[:, 4] = np.sqrt(np.maximum(sqc - np.sum(meanc ** 2, axis=1), 0.0))
    F[:, 5] = [class_extent.get(int(s), 0.0) for s in semantic]
    F[:, 6] = P[:, 2]
    F[:, 7] = intensity
    return F


def class_extents(spec: SceneSpec) -> dict:
    return {t.class_id: t.nominal_extent for t in spec.templates}


def simulate_regressed_centers(scene: Scene, noise: Optional[NoiseModel] = None, rng=None, semantic=None):
    """Regressed centers and features for the things points of ``scene``.

    Rows follow the order of ``scene.frame.points[scene.things_mask]``.
    ``semantic`` overrides the ground-truth classes used for the class
    extent feature (e.g. predicted semantics).
    """
    noise = scene.spec.noise if noise is None else noise
    rng = np.random.default_rng(rng)
    mask = scene.things_mask
    P = scene.frame.points[mask]
    ids = scene.frame.instance[mask]
    extents = {k: inst.length for k, inst in scene.instances.items()}
    C = regress_centers(P, ids, scene.box_centers, scene.axes, extents, noise, rng)
    sem = scene.frame.semantic[mask] if semantic is None else np.asarray(semantic)[mask]
    F = point_features(P, C, sem, P[:, 3], class_extents(scene.spec))
    return C, F


def center_regression_loss(offsets, points, gt_centers) -> float:
    """Mean per-point L1 error of predicted offsets against ``C_gt - P``."""
    O = np.asarray(offsets, dtype=np.float64)
    P = np.asarray(points, dtype=np.float64)[:, :3]
    C = np.asarray(gt_centers, dtype=np.float64)
    if len(P) == 0:
        raise ValueError("loss over zero points is undefined")
    if not (O.shape == P.shape == C.shape):
        raise ValueError("offsets, points and centers must share a shape")
    return float(np.abs(O - (C - P)).sum(axis=1).mean())


def mixed_size_benchmark_spec(seed: int = 0) -> SceneSpec:
    """The standard mixed-size benchmark: person / car / truck classes spanning 0.5-10 m."""
    return SceneSpec(seed=seed)


def scene_regression(scene: Scene, noise: Optional[NoiseModel] = None, rng=None, semantic=None):
    """Full-length ``(centers, features)``; rows outside ground-truth things keep ``C = P``."""
    P = scene.frame.points
    C = P[:, :3].copy()
    F = np.zeros((len(P), FEATURE_DIM))
    mask = scene.things_mask
    Ct, Ft = simulate_regressed_centers(scene, noise, rng, semantic)
    C[mask] = Ct
    F[mask] = Ft
    return C, F


class SequenceRegressor:
    """Simulated center regression for fused windows of a synthetic sequence.

    With ``overlapped=True`` the targets are the window-level union box
    centers; otherwise every frame regresses its own per-frame box center.
    Noise is seeded per window start so runs are reproducible.
    """

    def __init__(self, sequence: SyntheticSequence, noise: Optional[NoiseModel] = None, seed: int = 0, overlapped: bool = True):
        self.sequence = sequence
        self.noise = sequence.spec.noise if noise is None else noise
        self.seed = seed
        self.overlapped = overlapped

    def __call__(self, fused, window_frames, start: int):
        from .temporal import overlapped_center_targets

        ids = np.concatenate([f.instance for f in window_frames])
        sem = np.concatenate([f.semantic for f in window_frames])
        P = fused.points
        C = P[:, :3].copy()
        F = np.zeros((len(P), FEATURE_DIM))
        mask = ids != 0
        if not mask.any():
            return C, F
        if self.overlapped:
            targets = overlapped_center_targets(fused, ids)
        else:
            targets = P[:, :3].copy()
            for k, (a, b) in enumerate(zip(fused.offsets[:-1], fused.offsets[1:])):
                part = ids[a:b]
                for g in np.unique(part[part != 0]):
                    sel = np.flatnonzero(part == g) + a
                    targets[sel] = tight_box_center(P[sel, :3])
        rng = np.random.default_rng([self.seed, start])
        axes = self.sequence.axes[start]
        extents = {k: inst.length for k, inst in self.sequence.instances.items()}
        sub_ids = ids[mask]
        sub_targets = targets[mask]
        # noise is drawn per instance around each point's own target
        C_sub = sub_targets.copy()
        for g in np.unique(sub_ids):
            sel = sub_ids == g
            if self.noise.elongation:
                along = rng.normal(0.0, self.noise.elongation * extents[int(g)], int(sel.sum()))
                C_sub[sel] += along[:, None] * np.asarray(axes[int(g)])[None, :]
        if self.noise.jitter:
            C_sub += rng.normal(0.0, self.noise.jitter, C_sub.shape)
        C[mask] = C_sub
        F[mask] = point_features(P[mask], C_sub, sem[mask], P[mask, 3], class_extents(self.sequence.spec))
        return C, F
