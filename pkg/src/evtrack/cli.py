"""Command-line entry point: simulate, compensate, track, eval."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .config import Config, ConfigError, apply_overrides, as_dict, load
from .events import EventBatch, EventFileError, Events, atomic_write, format_events, parse_event_file
from .motion import compensate
from .sim import (
    parse_ground_truth,
    format_ground_truth,
    reprojection_rmse,
    run_benchmark,
    simulate_run,
    SUCCESS_GATE,
)
from .tracker import format_track, track_pattern

log = logging.getLogger("evtrack")


def _pair(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return x, y


def _set(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected section.key=value, got {text!r}")
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evtrack", description=__doc__)
    parser.add_argument("--version", action="version", version=f"evtrack {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--set", action="append", type=_set, default=[], metavar="KEY=VALUE",
                        help="override one config entry (repeatable)")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{simulate,compensate,track,eval}")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic event batch and its ground truth")
    p.add_argument("--scene", choices=["tags", "rocks"], default="tags")
    p.add_argument("--motion", choices=["translation", "se2"], default="se2")
    p.add_argument("--out", required=True, help="event file to write")
    p.add_argument("--gt", required=True, help="ground-truth file to write")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compensate", parents=[common], help="SE(2)-compensate one batch")
    p.add_argument("--events", required=True)
    p.add_argument("--seed", type=_pair, required=True, metavar="X,Y")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--out", required=True, help="compensated events (event-file format)")

    p = sub.add_parser("track", parents=[common], help="track patterns from seed positions")
    p.add_argument("--events", required=True)
    p.add_argument("--seeds", required=True, help="file of 'x y t' lines")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", parents=[common], help="reprojection-error evaluation")
    p.add_argument("--report", required=True, help="JSON report to write")
    p.add_argument("--events", help="event file from 'simulate' (single-run mode)")
    p.add_argument("--gt", help="ground-truth file from 'simulate' (single-run mode)")
    p.add_argument("--scene", choices=["tags", "rocks"], default="tags")
    p.add_argument("--motion", choices=["translation", "se2"], default="se2")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gate", type=float, default=SUCCESS_GATE)
    return parser


def _config(args) -> Config:
    cfg = load(args.config) if args.config else Config()
    return apply_overrides(cfg, dict(args.set)) if args.set else cfg


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl not installed; --threads ignored")
        return
    threadpool_limits(n)


def cmd_simulate(args, cfg: Config) -> int:
    # the event file stores integer pixels and microsecond times
    sim = simulate_run(args.scene, args.motion, args.seed, cfg.motion.batch_size, _quantized(cfg))
    atomic_write(args.out, format_events(sim.batch.events))
    atomic_write(args.gt, format_ground_truth(sim))
    print(json.dumps({"command": "simulate", "events": len(sim.batch), "config": as_dict(cfg)}))
    return 0


def _quantized(cfg: Config):
    from dataclasses import replace

    return replace(cfg.sim, quantize=True)


def cmd_compensate(args, cfg: Config) -> int:
    events = parse_event_file(args.events, cfg.sensor)
    sel = events[events.t >= args.t0][: cfg.motion.batch_size]
    if len(sel) < 2:
        print("error: fewer than two events after --t0", file=sys.stderr)
        return 1
    batch = EventBatch(sel, float(sel.t[0]), seed=np.asarray(args.seed))
    tic = time.perf_counter()
    res = compensate(batch, cfg.motion)
    metrics = {
        "command": "compensate",
        "lml_initial": res.lml_initial,
        "lml_final": res.lml_final,
        "iterations": res.iterations,
        "converged": res.converged,
        "config": as_dict(cfg),
    }
    runtime = time.perf_counter() - tic
    out = Events(batch.t, np.clip(res.compensated, 0, None), batch.events.polarity)
    # wall-clock time stays out of the file so reruns are byte-identical
    atomic_write(args.out, format_events(out) + "# metrics " + json.dumps(metrics) + "\n")
    print(json.dumps({**metrics, "runtime": runtime}))
    return 0


def _read_seeds(path) -> list[tuple[float, float, float]]:
    seeds = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'x y t'")
            seeds.append(tuple(float(v) for v in parts))
    return seeds


def cmd_track(args, cfg: Config) -> int:
    events = parse_event_file(args.events, cfg.sensor)
    seeds = _read_seeds(args.seeds)
    os.makedirs(args.out, exist_ok=True)
    summary = []
    for i, (x, y, t) in enumerate(seeds):
        track = track_pattern(events, (x, y), t, cfg.tracker, cfg.sensor, track_id=i)
        atomic_write(os.path.join(args.out, f"track_{i:04d}.txt"), format_track(track))
        summary.append({"id": i, "reason": track.reason.value if track.reason else None,
                        "lifetime": track.lifetime, "samples": len(track.history)})
    metrics = {"command": "track", "tracks": summary, "config": as_dict(cfg)}
    atomic_write(os.path.join(args.out, "metrics.json"), json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"command": "track", "tracks": len(summary)}))
    return 0


def timings_path(report: str) -> str:
    root, ext = os.path.splitext(report)
    return root + ".timings" + (ext or ".json")


def cmd_eval(args, cfg: Config) -> int:
    if (args.events is None) != (args.gt is None):
        print("error: --events and --gt go together", file=sys.stderr)
        return 2
    if args.events:
        events = parse_event_file(args.events, cfg.sensor)
        sim = parse_ground_truth(args.gt, events)
        tic = time.perf_counter()
        res = compensate(sim.batch, cfg.motion)
        elapsed = time.perf_counter() - tic
        ref = sim.reference_positions()
        rmse = reprojection_rmse(res.compensated, ref)
        report = {
            "mode": "single",
            "gate": args.gate,
            "success_rate": float(rmse < args.gate),
            "mean_rmse": rmse if rmse < args.gate else None,
            "runs": [{
                "index": 0, "rmse": rmse, "raw_rmse": reprojection_rmse(sim.batch.xy, ref),
                "success": rmse < args.gate, "iterations": res.iterations,
                "lml_initial": res.lml_initial, "lml_final": res.lml_final,
            }],
        }
        timings = {"mean_runtime": elapsed, "runtimes": [elapsed]}
    else:
        rep = run_benchmark(args.runs, args.scene, args.motion, cfg.motion, cfg.sim, args.gate, args.seed)
        report = {"mode": "benchmark", **rep.to_dict(timing=False)}
        timings = rep.timings()
    report["config"] = as_dict(cfg)
    # the report is reproducible byte for byte; wall-clock times go to a sidecar
    atomic_write(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")
    atomic_write(timings_path(args.report), json.dumps(timings, indent=2) + "\n")
    print(json.dumps({k: report[k] for k in ("mode", "success_rate", "mean_rmse")}))
    return 0


COMMANDS = {"simulate": cmd_simulate, "compensate": cmd_compensate, "track": cmd_track, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads(args.threads)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, EventFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
