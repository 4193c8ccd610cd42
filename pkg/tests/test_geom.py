import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dsnet.core import Frame, Pose
from dsnet.geom import (
    align_frame,
    bandwidth_mask,
    density_profile,
    farthest_point_sampling,
    nearest_neighbor_assign,
    pairwise_within,
    tight_box_center,
)


def random_pose(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return Pose(q, rng.normal(scale=20, size=3))


def test_fps_1d_example():
    X = np.array([0.0, 1.0, 2.0, 9.0])
    sel = farthest_point_sampling(X, 2, start=0)
    assert set(sel.tolist()) == {0, 3}
    # brute force: from index 0, the best partner maximizes the distance
    best = max(range(1, 4), key=lambda k: abs(X[k] - X[0]))
    assert best == 3


def test_fps_all_and_one():
    X = np.random.default_rng(0).normal(size=(7, 3))
    np.testing.assert_array_equal(farthest_point_sampling(X, 7), np.arange(7))
    np.testing.assert_array_equal(farthest_point_sampling(X, 50), np.arange(7))
    np.testing.assert_array_equal(farthest_point_sampling(X, 1, start=4), [4])
    assert len(farthest_point_sampling(np.zeros((0, 3)), 3)) == 0


def test_fps_greedy_matches_brute_force():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(12, 3))
    sel = farthest_point_sampling(X, 5, start=0)
    chosen = [0]
    for _ in range(4):
        rest = [k for k in range(12) if k not in chosen]
        chosen.append(max(rest, key=lambda k: min(np.linalg.norm(X[k] - X[c]) for c in chosen)))
    np.testing.assert_array_equal(sel, chosen)


def test_fps_seedable_start():
    X = np.random.default_rng(2).normal(size=(30, 3))
    a = farthest_point_sampling(X, 5, rng=11)
    b = farthest_point_sampling(X, 5, rng=11)
    np.testing.assert_array_equal(a, b)


def test_nn_examples():
    refs = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    np.testing.assert_array_equal(nearest_neighbor_assign(refs, refs), [0, 1])
    assert nearest_neighbor_assign([[0.4, 0, 0]], refs)[0] == 0
    assert nearest_neighbor_assign([[0.5, 0, 0]], refs)[0] == 0
    with pytest.raises(ValueError):
        nearest_neighbor_assign(refs, np.zeros((0, 3)))


def test_nn_matches_brute_force_with_ties():
    rng = np.random.default_rng(3)
    refs = rng.integers(0, 4, size=(40, 3)).astype(float)
    query = rng.integers(0, 4, size=(200, 3)).astype(float) + 0.5
    got = nearest_neighbor_assign(query, refs)
    for q, g in zip(query, got):
        d = np.sum((refs - q) ** 2, axis=1)
        assert g == np.flatnonzero(d == d.min())[0]


def test_bandwidth_mask_examples():
    m = bandwidth_mask([[0.0, 0, 0]], 1.0)
    np.testing.assert_array_equal(m.K, [[True]])
    np.testing.assert_array_equal(m.D, [1])
    X = [[0.0, 0, 0], [2.0, 0, 0]]
    m = bandwidth_mask(X, 1.0)
    np.testing.assert_array_equal(m.K, np.eye(2, dtype=bool))
    np.testing.assert_array_equal(m.D, [1, 1])
    m = bandwidth_mask(X, 3.0)
    assert m.K.all()
    np.testing.assert_array_equal(m.D, [2, 2])


def test_bandwidth_boundary_inclusive():
    X = [[0.0, 0, 0], [2.0, 0, 0]]
    assert bandwidth_mask(X, 2.0).K[0, 1]
    assert not bandwidth_mask(X, np.nextafter(2.0, 0)).K[0, 1]


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (15, 3), elements=st.floats(-5, 5)), st.floats(0.01, 3), st.floats(0.01, 3))
def test_bandwidth_mask_monotone(X, d1, d2):
    lo, hi = sorted((d1, d2))
    K1, K2 = bandwidth_mask(X, lo).K, bandwidth_mask(X, hi).K
    assert not np.any(K1 & ~K2)
    np.testing.assert_array_equal(K1, K1.T)
    assert K1.diagonal().all()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (20, 3), elements=st.floats(-5, 5)), st.floats(0.05, 4))
def test_pairwise_within_matches_dense_mask(X, r):
    i, j, _ = pairwise_within(X, r)
    K = np.zeros((20, 20), dtype=bool)
    K[i, j] = True
    np.testing.assert_array_equal(K, bandwidth_mask(X, r).K)


def test_align_examples():
    rng = np.random.default_rng(4)
    P = rng.normal(size=(10, 3))
    pose = random_pose(rng)
    np.testing.assert_allclose(align_frame(P, pose, pose), P, atol=1e-9)
    src = Pose(np.eye(3), [1.0, 0, 0])
    np.testing.assert_allclose(align_frame(P, src, Pose.identity()), P + [1.0, 0, 0], atol=1e-12)


def test_align_rejects_bad_rotation():
    class Fake:
        rotation = np.diag([1.0, 2.0, 1.0])
        translation = np.zeros(3)

    with pytest.raises(ValueError):
        align_frame(np.zeros((1, 3)), Fake(), Pose.identity())


def test_align_keeps_intensity():
    P = np.array([[1.0, 2.0, 3.0, 0.25]])
    out = align_frame(P, Pose(np.eye(3), [1.0, 0, 0]), Pose.identity())
    np.testing.assert_allclose(out, [[2.0, 2.0, 3.0, 0.25]])


@pytest.mark.parametrize("seed", range(20))
def test_align_rigid_and_invertible(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(scale=30, size=(25, 3))
    a, b = random_pose(rng), random_pose(rng)
    Q = align_frame(P, a, b)
    D0 = np.linalg.norm(P[:, None] - P[None], axis=-1)
    D1 = np.linalg.norm(Q[:, None] - Q[None], axis=-1)
    np.testing.assert_allclose(D1, D0, atol=1e-9)
    np.testing.assert_allclose(align_frame(Q, b, a), P, atol=1e-9)


def test_box_center_examples():
    np.testing.assert_allclose(tight_box_center([[0, 0, 0], [2, 4, 6]]), [1, 2, 3])
    np.testing.assert_allclose(tight_box_center([[1.5, -2, 3]]), [1.5, -2, 3])
    cube = np.array(list(itertools.product([-1, 1], repeat=3))) + [5, 6, 7]
    np.testing.assert_allclose(tight_box_center(cube), [5, 6, 7])
    with pytest.raises(ValueError):
        tight_box_center(np.zeros((0, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (8, 3), elements=st.floats(-100, 100)), st.randoms(use_true_random=False))
def test_box_center_order_and_duplication_invariant(X, rnd):
    perm = list(range(8))
    rnd.shuffle(perm)
    extra = X[[int(np.argmax(X[:, 0])), int(np.argmin(X[:, 2]))]]
    np.testing.assert_array_equal(tight_box_center(X[perm]), tight_box_center(X))
    np.testing.assert_array_equal(tight_box_center(np.vstack([X, extra])), tight_box_center(X))


def test_density_profile_examples():
    empty = Frame(np.zeros((3, 4)), [9, 9, 9], [0, 0, 0])
    assert density_profile([empty], [np.zeros((3, 3))], [0, 10, 20]) == [None, None]
    pts = np.array([[15.0, 0, 0, 0]] * 4)
    f = Frame(pts, [1] * 4, [1] * 4)
    C = np.full((4, 3), 15.05)
    assert density_profile([f], [C], [0, 10, 20]) == [None, 4.0]
