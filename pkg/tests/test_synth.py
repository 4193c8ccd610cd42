import numpy as np
import pytest

from dsnet.core import Pose
from dsnet.geom import density_profile
from dsnet.synth import (
    FEATURE_DIM,
    ClassTemplate,
    NoiseModel,
    SceneSpec,
    center_regression_loss,
    generate_scene,
    generate_sequence,
    regress_centers,
    scene_regression,
    simulate_regressed_centers,
)


def single_class_spec(r, extent=(2.0, 2.0), count=(1, 1), speed=(0.0, 0.0), **kw):
    tpl = ClassTemplate("box", 1, extent, 0.5, 1.5, count, (1, 1), (0.0, 0.0), speed)
    return SceneSpec(templates=[tpl], sensor_range=(r, r), road_points=10, vegetation_clumps=0, **kw)


def test_scene_determinism():
    spec = SceneSpec()
    a, b = generate_scene(spec, seed=3), generate_scene(spec, seed=3)
    assert a.frame.points.tobytes() == b.frame.points.tobytes()
    np.testing.assert_array_equal(a.frame.instance, b.frame.instance)
    assert not np.array_equal(generate_scene(spec, seed=4).frame.points[:5], a.frame.points[:5])


def test_scene_instance_count_matches_draws():
    for seed in range(10):
        s = generate_scene(SceneSpec(), seed=seed)
        ids = np.unique(s.frame.instance[s.frame.instance != 0])
        assert len(ids) == len(s.instances)
        assert set(ids.tolist()) == set(s.instances)
        for k in ids:
            assert np.count_nonzero(s.frame.instance == k) >= 1


def test_density_ratio_follows_curve():
    spec_near, spec_far = single_class_spec(10.0), single_class_spec(60.0)
    near = [np.count_nonzero(generate_scene(spec_near, seed=s).frame.instance == 1) for s in range(100)]
    far = [np.count_nonzero(generate_scene(spec_far, seed=s).frame.instance == 1) for s in range(100)]
    expected = spec_near.density(10.0) / spec_far.density(60.0)
    assert np.mean(near) / np.mean(far) == pytest.approx(expected, rel=0.1)


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(density_curve=[[0, 0.0], [10, 0.0]])
    with pytest.raises(ValueError):
        SceneSpec(density_curve=[[0, 1.0], [10, 2.0]])
    with pytest.raises(ValueError):
        SceneSpec(templates=[ClassTemplate("bad", 1, (0.0, 1.0))])


def test_spec_json_roundtrip(tmp_path):
    spec = SceneSpec(noise=NoiseModel(0.3, 0.01), ego_speed=0.5, seed=9)
    spec.save(tmp_path / "spec.json")
    back = SceneSpec.load(tmp_path / "spec.json")
    assert back.to_dict() == spec.to_dict()
    assert generate_scene(back).frame.points.tobytes() == generate_scene(spec).frame.points.tobytes()


def test_zero_noise_centers_are_box_centers():
    scene = generate_scene(SceneSpec(), seed=1)
    C, F = simulate_regressed_centers(scene, NoiseModel(0.0, 0.0), rng=0)
    ids = scene.frame.instance[scene.things_mask]
    for k in np.unique(ids):
        np.testing.assert_array_equal(C[ids == k], np.tile(scene.box_centers[int(k)], (np.sum(ids == k), 1)))
    assert F.shape == (len(C), FEATURE_DIM)


def test_elongation_residual_std():
    residuals = []
    for seed in range(100):
        scene = generate_scene(single_class_spec(15.0, extent=(4.0, 4.0)), seed=seed)
        C, _ = simulate_regressed_centers(scene, NoiseModel(0.3, 0.0), rng=seed)
        axis = scene.axes[1]
        residuals.append((C - scene.box_centers[1]) @ axis)
    assert np.std(np.concatenate(residuals)) == pytest.approx(1.2, rel=0.1)


def test_feature_layout():
    scene = generate_scene(SceneSpec(), seed=2)
    C, F = simulate_regressed_centers(scene, rng=0)
    P = scene.frame.points[scene.things_mask]
    np.testing.assert_allclose(F[:, 0], np.linalg.norm(P[:, :3], axis=1))
    np.testing.assert_allclose(F[:, 3], np.linalg.norm(C - P[:, :3], axis=1))
    np.testing.assert_allclose(F[:, 7], P[:, 3])
    full_C, full_F = scene_regression(scene, rng=0)
    np.testing.assert_array_equal(full_C[scene.things_mask], C)
    np.testing.assert_array_equal(full_F[~scene.things_mask], 0.0)


def test_center_regression_loss_examples():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(10, 3))
    C = rng.normal(size=(10, 3))
    assert center_regression_loss(C - P, P, C) == 0.0
    assert center_regression_loss([[1.0, 0, 0]], [[0.0, 0, 0]], [[0.0, 0, 0]]) == 1.0
    O = C - P + rng.normal(size=(10, 3))
    dup = center_regression_loss(np.vstack([O, O]), np.vstack([P, P]), np.vstack([C, C]))
    assert dup == pytest.approx(center_regression_loss(O, P, C), rel=1e-12)
    with pytest.raises(ValueError):
        center_regression_loss(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))


def test_residual_magnitude_tracks_extent():
    spec = SceneSpec()
    extents, residual = [], []
    for seed in range(100):
        scene = generate_scene(spec, seed=seed)
        mask = scene.things_mask
        ids = scene.frame.instance[mask]
        ext = {k: inst.length for k, inst in scene.instances.items()}
        C = regress_centers(scene.frame.points[mask], ids, scene.box_centers, scene.axes, ext, spec.noise,
                            np.random.default_rng(seed))
        for k in np.unique(ids):
            extents.append(ext[int(k)])
            residual.append(np.mean(np.linalg.norm(C[ids == k] - scene.box_centers[int(k)], axis=1)))
    assert np.corrcoef(extents, residual)[0, 1] > 0.9


def test_density_profile_falls_with_range():
    spec = SceneSpec(sensor_range=(5.0, 60.0))
    frames, centers = [], []
    for seed in range(30):
        scene = generate_scene(spec, seed=seed)
        C, _ = scene_regression(scene, rng=seed)
        frames.append(scene.frame)
        centers.append(C)
    prof = density_profile(frames, centers, [10, 20, 30, 45, 60])
    assert all(v is not None for v in prof)
    assert all(a >= b for a, b in zip(prof, prof[1:]))


def test_sequence_static_identity_ego():
    spec = single_class_spec(12.0, count=(3, 3))
    seq = generate_sequence(spec, 3, seed=4)
    assert [f.pose for f in seq.frames] == [Pose.identity()] * 3
    for f in seq.frames[1:]:
        assert set(np.unique(f.instance).tolist()) == set(np.unique(seq.frames[0].instance).tolist())
        for k in seq.instances:
            a = f.points[f.instance == k, :3]
            b = seq.frames[0].points[seq.frames[0].instance == k, :3]
            assert np.all(a.min(0) >= b.min(0) - 2.5) and np.all(a.max(0) <= b.max(0) + 2.5)


def test_sequence_motion_spacing():
    spec = single_class_spec(8.0, speed=(2.0, 2.0), density_curve=[[0, 400.0], [100, 400.0]])
    seq = generate_sequence(spec, 3, seed=5)
    inst = seq.instances[1]
    pos = [inst.position_at(t) for t in range(3)]
    np.testing.assert_allclose(np.linalg.norm(np.diff(pos, axis=0), axis=1), [2.0, 2.0])
    centers = [(f.points[f.instance == 1, :3].min(0) + f.points[f.instance == 1, :3].max(0)) / 2 for f in seq.frames]
    np.testing.assert_allclose(np.linalg.norm(np.diff(centers, axis=0), axis=1), [2.0, 2.0], atol=0.1)


def test_sequence_single_frame_equals_scene():
    spec = SceneSpec()
    seq = generate_sequence(spec, 1, seed=8)
    scene = generate_scene(spec, seed=8)
    assert seq.frames[0].points.tobytes() == scene.frame.points.tobytes()
    np.testing.assert_array_equal(seq.frames[0].instance, scene.frame.instance)
    with pytest.raises(ValueError):
        generate_sequence(spec, 0)


def test_sequence_ids_consistent_with_ego_motion():
    spec = SceneSpec(ego_speed=1.0, ego_yaw_rate=0.05)
    seq = generate_sequence(spec, 4, seed=6)
    for f in seq.frames:
        assert set(np.unique(f.instance[f.instance != 0]).tolist()) == set(seq.instances)
