import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evtrack.events import (
    Event,
    EventBatch,
    EventFileError,
    Events,
    SensorGeometry,
    collect_batch,
    downsample_batch,
    parse_event_file,
    write_event_file,
)


def _write(tmp_path, text, name="ev.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_single_line(tmp_path):
    ev = parse_event_file(_write(tmp_path, "0.004000 120 85 1\n"), SensorGeometry())
    assert list(ev) == [Event(t=0.004, x=120.0, y=85.0, polarity=1)]


def test_parse_empty_and_comments(tmp_path):
    assert len(parse_event_file(_write(tmp_path, ""))) == 0
    assert len(parse_event_file(_write(tmp_path, "# header\n\n# more\n"))) == 0


def test_out_of_bounds_dropped(tmp_path):
    geo = SensorGeometry(width=640, height=480)
    ev = parse_event_file(_write(tmp_path, "0.0 5 5 0\n0.1 700 10 0\n"), geo)
    assert len(ev) == 1


@pytest.mark.parametrize(
    "line",
    ["0.1 1 2", "0.1 1 2 3 4", "0.1 1.5 2 0", "0.1 1 2 2", "abc 1 2 0", "-1 1 2 0", "nan 1 2 0"],
)
def test_malformed_lines_raise(tmp_path, line):
    with pytest.raises(EventFileError) as exc:
        parse_event_file(_write(tmp_path, "0.0 1 1 0\n" + line + "\n"))
    assert "2" in str(exc.value)


def test_non_monotonic_times_are_sorted(tmp_path, caplog):
    ev = parse_event_file(_write(tmp_path, "0.2 1 1 0\n0.1 2 2 1\n0.2 3 3 0\n"))
    np.testing.assert_array_equal(ev.t, [0.1, 0.2, 0.2])
    # stable: the two t=0.2 events keep their file order
    np.testing.assert_array_equal(ev.xy[:, 0], [2, 1, 3])
    assert "monotonic" in caplog.text


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(0, 10**6), st.integers(0, 239), st.integers(0, 179), st.integers(0, 1)),
        max_size=40,
    )
)
def test_write_parse_round_trip(tmp_path_factory, rows):
    rows = sorted(rows, key=lambda r: r[0])
    ev = Events.from_list([Event(us * 1e-6, x, y, p) for us, x, y, p in rows])
    path = tmp_path_factory.mktemp("rt") / "e.txt"
    write_event_file(path, ev)
    assert parse_event_file(path, SensorGeometry()) == ev


def _uniform_stream(n=5000, seed=0, center=(100.0, 80.0), half=15):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 1, n))
    xy = np.asarray(center) + rng.integers(-half, half + 1, size=(n, 2))
    return Events(t, xy.astype(float))


def test_collect_batch_count_and_order():
    s = _uniform_stream()
    b = collect_batch(s, (100, 80), 0.0, size=1250, radius=15)
    assert len(b) == 1250 and not b.depleted
    assert np.all(np.diff(b.t) >= 0)


def test_collect_batch_far_seed_is_depleted():
    b = collect_batch(_uniform_stream(), (10, 10), 0.0, size=100, radius=5)
    assert len(b) == 0 and b.depleted


def test_collect_batch_boundary_inclusive():
    ev = Events(np.array([0.0, 0.1, 0.2]), np.array([[15.0, 0.0], [-15.0, 15.0], [15.5, 0.0]]))
    b = collect_batch(ev, (0, 0), 0.0, size=10, radius=15)
    assert len(b) == 2 and b.depleted


def test_collect_batch_respects_t_from():
    s = _uniform_stream()
    b = collect_batch(s, (100, 80), 0.5, size=50, radius=15)
    assert b.t[0] >= 0.5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 300), st.floats(2, 20))
def test_collect_batch_is_sorted_subsequence(seed, size, radius):
    s = _uniform_stream(n=500, seed=seed)
    b = collect_batch(s, (95, 85), 0.2, size=size, radius=radius)
    rows = {(t, x, y) for t, (x, y) in zip(s.t, s.xy)}
    assert all((t, x, y) in rows for t, (x, y) in zip(b.t, b.xy))
    assert np.all(np.diff(b.t) >= 0)
    assert np.all(np.max(np.abs(b.xy - [95, 85]), axis=1) <= radius)


def _batch(n):
    return EventBatch(Events(np.arange(n) * 1e-3, np.zeros((n, 2)) + np.arange(n)[:, None]), 0.0)


def test_downsample_examples():
    b = _batch(1250)
    assert downsample_batch(b, 1250).events == b.events
    np.testing.assert_array_equal(downsample_batch(_batch(10), 5).xy[:, 0], [0, 2, 4, 6, 8])
    d = downsample_batch(b, 400)
    idx = d.xy[:, 0]
    assert len(d) == 400 and idx[0] == 0 and np.all(np.diff(idx) > 0)


@given(st.integers(1, 200), st.data())
def test_downsample_subsequence(n, data):
    k = data.draw(st.integers(1, n))
    d = downsample_batch(_batch(n), k)
    idx = d.xy[:, 0]
    assert len(d) == k and np.all(np.diff(idx) > 0) and idx[-1] < n


def test_downsample_rejects_bad_target():
    with pytest.raises(ValueError):
        downsample_batch(_batch(5), 0)
    with pytest.raises(ValueError):
        downsample_batch(_batch(5), 6)


def test_events_immutable():
    ev = _uniform_stream(n=10)
    with pytest.raises(AttributeError):
        ev.t = None
    with pytest.raises(ValueError):
        ev.t[0] = 5.0
