"""Flat ``section.key = value`` configuration files."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any

from .events import SensorGeometry
from .motion import MotionCompConfig
from .sim import SimConfig
from .tracker import TrackerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    motion: MotionCompConfig = field(default_factory=MotionCompConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    sensor: SensorGeometry = field(default_factory=SensorGeometry)
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        # the tracker always runs with the motion section
        if self.tracker.motion != self.motion:
            object.__setattr__(self, "tracker", replace(self.tracker, motion=self.motion))
        if self.sensor.patch_radius != self.tracker.patch_radius:
            object.__setattr__(self, "sensor", replace(self.sensor, patch_radius=self.tracker.patch_radius))


_SECTIONS = ("motion", "tracker", "sensor", "sim")


# derived fields, owned by another section
_SKIP = {(TrackerConfig, "motion"), (SensorGeometry, "patch_radius")}


def _keys(obj) -> list[str]:
    return [f.name for f in fields(obj) if (obj.__class__, f.name) not in _SKIP]


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default: Any, key: str) -> Any:
    s = raw.strip()
    try:
        if isinstance(default, bool):
            if s.lower() in ("true", "1", "yes", "on"):
                return True
            if s.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(default, tuple):
            return tuple(float(v) for v in s.split(",") if v.strip())
        if default is None:
            return None if s.lower() == "none" else float(s)
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
        return s
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def dump(cfg: Config) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for k in _keys(obj):
            lines.append(f"{section}.{k} = {_format(getattr(obj, k))}")
    return "\n".join(lines) + "\n"


def as_dict(cfg: Config) -> dict[str, Any]:
    out = {}
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for k in _keys(obj):
            v = getattr(obj, k)
            out[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
    return out


def apply_overrides(cfg: Config, entries: dict[str, str]) -> Config:
    """Return ``cfg`` with string ``section.key`` entries applied and validated."""
    updates: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
    defaults = Config()
    for key, raw in entries.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS or name not in _keys(getattr(defaults, section)):
            raise ConfigError(f"unknown config key {key!r}")
        updates[section][name] = _parse(raw, getattr(getattr(defaults, section), name), key)
    try:
        new = {s: replace(getattr(cfg, s), **updates[s]) for s in _SECTIONS}
        return Config(**new)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def loads(text: str, base: Config | None = None) -> Config:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, value = s.partition("=")
        key = key.strip()
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return apply_overrides(base or Config(), entries)


def load(path) -> Config:
    with open(path) as fh:
        return loads(fh.read())
