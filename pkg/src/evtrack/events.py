"""Events, event files and fixed-size batching around a seed."""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

log = logging.getLogger(__name__)


class EventFileError(ValueError):
    """Malformed event file line."""

    def __init__(self, path, lineno: int, line: str, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}: {line.strip()!r}")
        self.lineno = lineno


class Event(NamedTuple):
    t: float
    x: float
    y: float
    polarity: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 240
    height: int = 180
    patch_radius: float = 15.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0 and self.patch_radius > 0):
            raise ValueError(f"invalid sensor geometry {self}")


class Events:
    """Column-oriented, immutable sequence of events.

    Indexing with an integer gives an :class:`Event`; slices, masks and index
    arrays give a new ``Events``.
    """

    __slots__ = ("t", "xy", "polarity")

    def __init__(self, t, xy, polarity=None):
        t = np.asarray(t, dtype=float).reshape(-1)
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if polarity is None:
            polarity = np.ones(t.size, dtype=np.int8)
        polarity = np.asarray(polarity, dtype=np.int8).reshape(-1)
        if not (t.size == xy.shape[0] == polarity.size):
            raise ValueError("t, xy and polarity lengths differ")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(xy))):
            raise ValueError("event times and coordinates must be finite")
        if np.any(t < 0):
            raise ValueError("event times must be non-negative")
        for a in (t, xy, polarity):
            a.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "polarity", polarity)

    def __setattr__(self, name, value):
        raise AttributeError("Events is immutable")

    @classmethod
    def empty(cls) -> "Events":
        return cls(np.empty(0), np.empty((0, 2)), np.empty(0, dtype=np.int8))

    @classmethod
    def from_list(cls, events) -> "Events":
        events = list(events)
        if not events:
            return cls.empty()
        arr = np.array([(e.t, e.x, e.y, e.polarity) for e in events], dtype=float)
        return cls(arr[:, 0], arr[:, 1:3], arr[:, 3].astype(np.int8))

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Event(float(self.t[idx]), float(self.xy[idx, 0]), float(self.xy[idx, 1]), int(self.polarity[idx]))
        return Events(self.t[idx], self.xy[idx], self.polarity[idx])

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, Events):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.polarity, other.polarity)
        )

    def __repr__(self):
        return f"Events(n={len(self)})"


@dataclass(frozen=True)
class EventBatch:
    events: Events
    t_start: float
    seed: np.ndarray | None = None
    depleted: bool = False

    @property
    def t(self) -> np.ndarray:
        return self.events.t

    @property
    def xy(self) -> np.ndarray:
        return self.events.xy

    def __len__(self) -> int:
        return len(self.events)


def parse_event_file(path, geometry: SensorGeometry | None = None) -> Events:
    """Read ``t x y p`` lines; ``#`` lines and blank lines are skipped.

    Events outside the sensor are dropped. Out-of-order timestamps are
    logged and the events re-sorted (stable).
    """
    ts, xs, ys, ps = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 4:
                raise EventFileError(path, lineno, line, "expected 4 fields")
            try:
                t = float(parts[0])
                x, y, p = int(parts[1]), int(parts[2]), int(parts[3])
            except ValueError:
                raise EventFileError(path, lineno, line, "bad number") from None
            if p not in (0, 1):
                raise EventFileError(path, lineno, line, "polarity must be 0 or 1")
            if not np.isfinite(t) or t < 0:
                raise EventFileError(path, lineno, line, "time must be finite and >= 0")
            if geometry is not None and not (0 <= x < geometry.width and 0 <= y < geometry.height):
                continue
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(p)
    if not ts:
        return Events.empty()
    t = np.array(ts)
    xy = np.column_stack([xs, ys]).astype(float)
    pol = np.array(ps, dtype=np.int8)
    if np.any(np.diff(t) < 0):
        log.warning("%s: timestamps are not monotonic, re-sorting", path)
        order = np.argsort(t, kind="stable")
        t, xy, pol = t[order], xy[order], pol[order]
    return Events(t, xy, pol)


def format_events(events: Events) -> str:
    lines = [
        f"{np.format_float_positional(t, unique=True, trim='0')} {int(round(x))} {int(round(y))} {int(p)}\n"
        for t, (x, y), p in zip(events.t, events.xy, events.polarity)
    ]
    return "".join(lines)


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temp file next to ``path`` and rename it over."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_event_file(path, events: Events) -> None:
    """Write events in the text format; coordinates are rounded to integers."""
    atomic_write(path, format_events(events))


def collect_batch(
    stream: Events,
    seed,
    t_from: float,
    size: int = 1250,
    radius: float = 15.0,
) -> EventBatch:
    """First ``size`` events at or after ``t_from`` inside the square window.

    The window is ``max(|x - sx|, |y - sy|) <= radius``. When the stream runs
    out the short batch is returned with ``depleted`` set.
    """
    if size < 1 or radius <= 0:
        raise ValueError("size must be >= 1 and radius > 0")
    seed = np.asarray(seed, dtype=float).reshape(2)
    start = int(np.searchsorted(stream.t, t_from, side="left"))
    tail_xy = stream.xy[start:]
    inside = np.max(np.abs(tail_xy - seed), axis=1) <= radius
    idx = np.flatnonzero(inside)[:size] + start
    events = stream[idx]
    depleted = idx.size < size
    t_start = float(events.t[0]) if len(events) else float(t_from)
    return EventBatch(events=events, t_start=t_start, seed=seed, depleted=bool(depleted))


def downsample_batch(batch: EventBatch, target: int) -> EventBatch:
    """Keep ``target`` events at evenly strided indices, always including the first."""
    n = len(batch)
    if not 1 <= target <= n:
        raise ValueError(f"target must be in [1, {n}], got {target}")
    idx = (np.arange(target) * n) // target
    return EventBatch(events=batch.events[idx], t_start=batch.t_start, seed=batch.seed, depleted=batch.depleted)
