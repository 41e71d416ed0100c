import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evtrack.fields import (
    EPS_FLOOR,
    PointAtInfinityError,
    RegistrationTerm,
    build_distance_field,
    build_occupancy,
    distance_gradient,
    distance_query,
    normalize_h,
    project,
    rasterize,
    register_homography,
    register_terms,
    registration_cost,
    thin_support,
    translation_h,
)
from evtrack.gp import SqExpKernel

from conftest import central_diff, corner_error, grid_points, homography_instance

L = 0.25


def single(noise=0.0, ell=L):
    return build_distance_field([[0.0, 0.0]], SqExpKernel(1.0, ell), noise)


def test_occupancy_single_point():
    occ = build_occupancy([[0.0, 0.0]], SqExpKernel(1.0, L), 0.0)
    assert occ.mean([0, 0])[0] == pytest.approx(1.0)
    for r in (0.1, 0.3, 0.7):
        assert occ.mean([r, 0])[0] == pytest.approx(math.exp(-r * r / (2 * L * L)), rel=1e-12)
    assert occ.mean([50, 50])[0] < 1e-12


def test_distance_single_point_examples():
    f = single()
    assert distance_query(f, (0, 0)) == 0.0
    assert distance_query(f, (0.5, 0)) == pytest.approx(2.0, abs=1e-12)
    assert distance_query(f, (100, 0)) == pytest.approx(-math.log(EPS_FLOOR))
    np.testing.assert_array_equal(distance_gradient(f, (0, 0)), [0.0, 0.0])
    np.testing.assert_allclose(distance_gradient(f, (0.3, 0)), [0.3 / L**2, 0.0], rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, 4 * L))
def test_distance_closed_form_any_direction(phi, r):
    f = single()
    q = (r * math.cos(phi), r * math.sin(phi))
    assert distance_query(f, q) == pytest.approx(r * r / (2 * L * L), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_distance_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    f = build_distance_field(rng.uniform(-2, 2, size=(25, 2)), SqExpKernel(1.0, 0.5), 1e-2)
    for q in rng.uniform(-2, 2, size=(10, 2)):
        if not 1e-10 < f.occupancy.mean(q)[0] < 1:
            continue
        fd = central_diff(lambda x: distance_query(f, x), q, h=1e-6)
        np.testing.assert_allclose(distance_gradient(f, q), fd, rtol=1e-5, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_distance_nonnegative(seed):
    rng = np.random.default_rng(seed)
    # dense clusters make the GP mean overshoot 1; the clamp keeps d >= 0
    pts = np.vstack([rng.normal(scale=0.1, size=(30, 2)), rng.uniform(-3, 3, size=(20, 2))])
    f = build_distance_field(pts, SqExpKernel(1.0, L), 1e-3, thin=False)
    assert np.all(f(rng.uniform(-4, 4, size=(200, 2))) >= 0)


def test_thin_support():
    pts = np.random.default_rng(0).uniform(0, 10, size=(1500, 2))
    th = thin_support(pts, 0.125)
    assert th.shape[0] < 1500 or th.shape[0] == 1500
    assert thin_support(pts[:500], 0.125).shape == (500, 2)
    coarse = thin_support(pts, 2.0)
    assert coarse.shape[0] <= 25
    np.testing.assert_allclose(coarse.mean(axis=0), pts.mean(axis=0), atol=1.0)


def test_project_examples():
    np.testing.assert_allclose(project(np.eye(3), (5, 7)), (5, 7))
    np.testing.assert_allclose(project(translation_h(2, 3), (0, 0)), (2, 3))
    H = np.array([[1, 0, 0], [0, 1, 0], [0.01, 0, 1.0]])
    np.testing.assert_allclose(project(H, (10, 0)), (10 / 1.1, 0), rtol=1e-15)
    with pytest.raises(PointAtInfinityError):
        project(np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0.0]]), (0, 0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_project_inverse_round_trip(seed):
    rng = np.random.default_rng(seed)
    H = np.eye(3) + rng.uniform(-0.05, 0.05, (3, 3)) * [[1, 1, 20], [1, 1, 20], [0.01, 0.01, 0]]
    e = rng.uniform(-20, 20, size=(20, 2))
    np.testing.assert_allclose(project(H, project(np.linalg.inv(H), e)), e, atol=1e-9)


def test_normalize_h():
    np.testing.assert_allclose(normalize_h(2 * np.eye(3)), np.eye(3))
    with pytest.raises(ValueError):
        normalize_h(np.zeros((3, 3)))


def test_register_identity():
    pts = grid_points()
    f = build_distance_field(pts)
    H, cost, ok = register_homography(pts, f, f, pts)
    np.testing.assert_allclose(H, np.eye(3), atol=1e-12)
    assert cost < 0.05


def test_register_known_homography():
    fixed = grid_points()
    c, s = math.cos(0.05), math.sin(0.05)
    Hs = np.array([[c, -s, 1.5], [s, c, -0.8], [0, 0, 1.0]])
    moving = project(Hs, fixed)
    H, _, ok = register_homography(moving, build_distance_field(fixed), build_distance_field(moving), fixed)
    assert ok
    assert corner_error(H, np.linalg.inv(Hs), fixed) < 0.1


@pytest.mark.parametrize("seed", range(6))
def test_register_random_with_outliers(seed):
    rng = np.random.default_rng(seed)
    fixed, moving, Ht = homography_instance(rng, outlier_fraction=0.1)
    H, _, _ = register_homography(moving, build_distance_field(fixed), build_distance_field(moving), fixed)
    assert corner_error(H, Ht, fixed) < 0.3


def test_register_cost_monotone_and_inverse_consistent():
    rng = np.random.default_rng(42)
    fixed, moving, Ht = homography_instance(rng)
    ff, fm = build_distance_field(fixed), build_distance_field(moving)
    terms = [RegistrationTerm(moving, ff), RegistrationTerm(fixed, fm, inverse=True)]
    res = register_terms(terms, np.eye(3))
    assert all(b <= a for a, b in zip(res.costs, res.costs[1:]))
    assert res.cost <= registration_cost(terms, np.eye(3))
    H_fwd, _, _ = register_homography(moving, ff, fm, fixed)
    H_bwd, _, _ = register_homography(fixed, fm, ff, moving)
    patch = rng.uniform(-16, 16, size=(100, 2))
    assert np.max(np.linalg.norm(project(H_bwd @ H_fwd, patch) - patch, axis=1)) < 0.05


def test_register_failure_returns_init():
    # no structure to align: a far-away moving set gives zero gradients
    fixed = grid_points()
    moving = fixed + 1000.0
    H0 = translation_h(0.0, 0.0)
    H, _, ok = register_homography(moving, build_distance_field(fixed), build_distance_field(moving), fixed, H0, pyramid=())
    assert not ok
    np.testing.assert_array_equal(H, H0)


def test_rasterize_shape():
    text = rasterize(single(), -1, -1, 1, 1, 0.5)
    rows = text.splitlines()
    assert len(rows) == 5 and all(len(r.split()) == 5 for r in rows)
