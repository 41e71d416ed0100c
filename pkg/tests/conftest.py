import numpy as np
import pytest


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 10):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")
        else:
            terminalreporter.write_line(f"criterion {k}: NOT RUN")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x, h=1e-6):
    """Central finite differences of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def grid_points(n=9, spacing=4.0):
    g = (np.arange(n) - (n - 1) / 2) * spacing
    return np.array([(x, y) for y in g for x in g])


def random_homography(rng, max_rot=0.05, max_shift=2.0, max_proj=0.002):
    """Small homography in patch-centred coordinates."""
    th = rng.uniform(-max_rot, max_rot)
    d = rng.normal(size=2)
    t = d / np.linalg.norm(d) * rng.uniform(0, max_shift)
    v = rng.uniform(-max_proj, max_proj, 2)
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, -s, t[0]], [s, c, t[1]], [v[0], v[1], 1.0]])


def homography_instance(rng, outlier_fraction=0.0, spacing=4.0):
    """(fixed grid, moving points, true H mapping moving onto fixed)."""
    from evtrack.fields import project

    fixed = grid_points(spacing=spacing)
    Hs = random_homography(rng)
    moving = project(Hs, fixed)
    k = int(round(outlier_fraction * len(fixed)))
    if k:
        idx = rng.choice(len(fixed), k, replace=False)
        lo, hi = fixed.min() - 2, fixed.max() + 2
        moving[idx] = rng.uniform(lo, hi, size=(k, 2))
    return fixed, moving, np.linalg.inv(Hs)


def corner_error(H_est, H_true, fixed):
    from evtrack.fields import project

    corners = fixed[[0, 8, 72, 80]]
    src = project(np.linalg.inv(H_true), corners)
    return float(np.max(np.linalg.norm(project(H_est, src) - corners, axis=1)))


def motion_gradient_instance(seed, count=50):
    """Small SE(2) batch, its objective and a random parameter vector."""
    from evtrack.motion import MotionCompConfig, Objective
    from evtrack.se2 import make_trajectory
    from evtrack.sim import simulate_run

    s = simulate_run("tags", "se2", seed, count)
    traj = make_trajectory(s.batch.t, events_per_state=10, center=s.batch.seed)
    q = traj.n_states
    rng = np.random.default_rng(seed + 7)
    theta = np.concatenate([rng.normal(scale=0.02, size=q), rng.normal(scale=0.5, size=2 * q)])
    return Objective(traj, s.batch.xy, s.batch.t, MotionCompConfig()), theta


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
