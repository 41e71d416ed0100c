import math

import numpy as np
import pytest

from evtrack.events import EventBatch, Events
from evtrack.motion import MotionCompConfig, Objective, compensate, dithered, kf_gram, objective
from evtrack.se2 import make_trajectory
from evtrack.sim import SimConfig, reprojection_rmse, simulate_run

from conftest import central_diff, motion_gradient_instance, relative_error


def _zero_traj(n=2):
    return make_trajectory(np.linspace(0, 0.01, n))


def test_kf_gram_examples():
    cfg = MotionCompConfig()
    K = kf_gram(_zero_traj(), [[3.0, 4.0], [3.0, 4.0]], [0.0, 0.01], cfg)
    assert K[0, 1] == pytest.approx(cfg.kernel_scale)
    K = kf_gram(_zero_traj(), [[0.0, 0.0], [cfg.kernel_lengthscale, 0.0]], [0.0, 0.01], cfg)
    assert K[0, 1] == pytest.approx(cfg.kernel_scale * math.exp(-0.5), rel=1e-12)


def test_kf_gram_symmetric_with_exact_diagonal():
    s = simulate_run("tags", "se2", 0, 60)
    traj = make_trajectory(s.batch.t, 20).with_params(np.random.default_rng(0).normal(scale=0.1, size=12))
    K = kf_gram(traj, s.batch.xy, s.batch.t, MotionCompConfig())
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_objective_gradient_finite_differences(seed):
    obj, theta = motion_gradient_instance(seed)
    _, g = obj(theta)
    fd = central_diff(lambda p: obj(p)[0], theta, h=1e-6)
    assert relative_error(g, fd) < 1e-4


def test_objective_is_deterministic_and_finite():
    obj, theta = motion_gradient_instance(3)
    a = obj(theta)
    b = obj(theta.copy())
    assert np.isfinite(a[0]) and a[0] == b[0] and np.array_equal(a[1], b[1])



def test_objective_function_form():
    s = simulate_run("tags", "se2", 1, 40)
    traj = make_trajectory(s.batch.t, 10, center=s.batch.seed)
    p = np.full(3 * traj.n_states, 0.01)
    v, g = objective(p, traj, s.batch.xy, s.batch.t, MotionCompConfig())
    w, h = Objective(traj, s.batch.xy, s.batch.t, MotionCompConfig())(p)
    assert v == w and np.array_equal(g, h)


def test_zero_motion_symmetric_batch_is_stationary():
    # every position observed at the same set of times: the objective's
    # translation and rotation invariance forces a zero gradient at identity
    rng = np.random.default_rng(0)
    P = rng.uniform(110, 130, (20, 2))
    tau = np.sort(rng.uniform(0, 0.05, 20))
    t, xy = np.repeat(tau, 20), np.tile(P, (20, 1))
    traj = make_trajectory(t, events_per_state=100, center=(120, 90))
    _, g = Objective(traj, xy, t, MotionCompConfig())(np.zeros(3 * traj.n_states))
    assert np.linalg.norm(g) / len(t) < 1e-3


def test_compensate_zero_motion_stays_at_identity():
    s = simulate_run("tags", "none", 3, 1250)
    r = compensate(s.batch)
    assert np.max(np.abs(r.trajectory.rot)) < 1e-2
    assert np.max(np.linalg.norm(r.trajectory.trans, axis=1)) < 0.1
    # a still batch offers no meaningful likelihood gain
    assert not r.converged


def test_compensate_translation_batch():
    cfg = MotionCompConfig(batch_size=400, optimize_size=400)
    s = simulate_run("tags", "translation", 5, 400)
    r = compensate(s.batch, cfg)
    ref = s.reference_positions()
    rmse = reprojection_rmse(r.compensated, ref)
    assert r.converged
    assert rmse < 1.0 < reprojection_rmse(s.batch.xy, ref)
    # accepted iterates never lose likelihood
    assert all(b >= a - 1e-9 for a, b in zip(r.history, r.history[1:]))
    assert r.history[0] == r.lml_initial and r.history[-1] == pytest.approx(r.lml_final)


def _cluster_spread(points, labels):
    tot = 0.0
    for k in np.unique(labels):
        p = points[labels == k]
        tot += np.sum((p - p.mean(axis=0)) ** 2)
    return tot / len(points)


def test_compensated_spread_not_above_raw():
    cfg = MotionCompConfig(batch_size=400, optimize_size=400)
    s = simulate_run("tags", "se2", 2, 400)
    r = compensate(s.batch, cfg)
    assert r.converged
    lab = s.landmark_index
    assert _cluster_spread(r.compensated, lab) <= _cluster_spread(s.batch.xy, lab)


def test_equivariance_under_translation():
    cfg = MotionCompConfig(batch_size=400, optimize_size=400)
    s = simulate_run("tags", "se2", 4, 400)
    b = s.batch
    c = np.array([7.25, -3.5])
    moved = EventBatch(Events(b.t, b.xy + c, b.events.polarity), b.t_start, b.seed + c)
    r0, r1 = compensate(b, cfg), compensate(moved, cfg)
    assert np.max(np.abs(r1.compensated - (r0.compensated + c))) < 1e-3


def test_warm_start_does_not_change_reference_likelihood():
    cfg = MotionCompConfig(batch_size=400, optimize_size=400, warmup_lengthscales=())
    s = simulate_run("tags", "translation", 6, 400)
    r0 = compensate(s.batch, cfg)
    r1 = compensate(s.batch, cfg, init=r0.trajectory.params)
    assert r1.lml_initial == r0.lml_initial
    assert r1.lml_final >= r0.lml_final - 1e-6


def test_dither_only_touches_integer_batches():
    cfg = MotionCompConfig()
    b = simulate_run("tags", "none", 0, 50).batch
    assert dithered(b, cfg) is b
    q = EventBatch(Events(b.t, np.round(b.xy)), b.t_start, b.seed)
    d = dithered(q, cfg)
    assert np.all(np.abs(d.xy - q.xy) <= 0.5)
    np.testing.assert_array_equal(d.xy, dithered(q, cfg).xy)


def test_config_validation():
    with pytest.raises(ValueError):
        MotionCompConfig(optimize_size=2000)
    with pytest.raises(ValueError):
        MotionCompConfig(noise=0)
    with pytest.raises(ValueError):
        compensate(EventBatch(Events(np.zeros(1), np.zeros((1, 2))), 0.0))
