"""Command-line entry point: ``mqa {gen,run,bench,predict-eval}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence

from .core import SimConfig
from .harness import (
    dump_workload,
    evaluate_prediction,
    format_report,
    generate_synthetic,
    parse_workload,
    rate_stream,
    run_simulation,
)
from .solvers import SizeGuardError

log = logging.getLogger("mqa")

# flag name -> SimConfig field
_CONFIG_FLAGS = {"seed": "seed", "m": "m", "n": "n", "R": "R", "B": "B", "C": "C", "w": "w",
                 "gamma": "gamma", "delta": "delta", "q_range": "q_range",
                 "e_range": "e_range", "v_range": "v_range"}
_RANGE_FIELDS = ("q_range", "e_range", "v_range")


def _range(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected LO,HI")
    return (float(parts[0]), float(parts[1]))


def _windows(text: str) -> List[int]:
    lo, sep, hi = text.partition("..")
    try:
        first, last = int(lo), int(hi) if sep else int(lo)
    except ValueError:
        raise argparse.ArgumentTypeError("expected N or A..B") from None
    if not 1 <= first <= last:
        raise argparse.ArgumentTypeError("windows must satisfy 1 <= A <= B")
    return list(range(first, last + 1))


def _add_config_flags(p: argparse.ArgumentParser, window_flag: bool = True) -> None:
    p.add_argument("--config", help="JSON file with config values")
    p.add_argument("--seed", type=int)
    p.add_argument("--m", type=int, help="total tasks")
    p.add_argument("--n", type=int, help="total workers")
    p.add_argument("--R", type=int, help="number of instances")
    p.add_argument("--B", type=float, help="budget per instance")
    p.add_argument("--C", type=float, help="unit price")
    if window_flag:
        p.add_argument("--w", type=int, help="prediction window")
    p.add_argument("--gamma", type=int, help="grid cells per side")
    p.add_argument("--delta", type=float)
    p.add_argument("--q-range", dest="q_range", type=_range)
    p.add_argument("--e-range", dest="e_range", type=_range)
    p.add_argument("--v-range", dest="v_range", type=_range)
    p.add_argument("--scale", type=float, default=0.01,
                   help="multiplier for the default m and n (default 0.01)")


def resolve_config(args: argparse.Namespace) -> SimConfig:
    """Defaults, then the config file, then explicit flags."""
    base = SimConfig()
    values = base.to_dict()
    values["m"] = round(base.m * args.scale)
    values["n"] = round(base.n * args.scale)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values.update(json.load(fh))
    for flag, name in _CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    for name in _RANGE_FIELDS:
        values[name] = list(values[name])
    return SimConfig.from_dict(values)


def _write(text: str, out: Optional[str]) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
        return
    tmp = out + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, out)


def _load_stream(args, config):
    if getattr(args, "workload", None):
        with open(args.workload, encoding="utf-8") as fh:
            return parse_workload(fh.read(), config.R, config)
    return generate_synthetic(config)


def cmd_gen(args) -> int:
    config = resolve_config(args)
    _write(dump_workload(generate_synthetic(config)), args.out)
    return 0


def cmd_run(args) -> int:
    config = resolve_config(args)
    stream = _load_stream(args, config)
    metrics = run_simulation(stream, args.solver, config,
                             prediction=args.prediction == "on",
                             adaptive=args.adaptive == "on",
                             timing=args.timing)
    _write(format_report(metrics, args.format), args.out)
    return 0


def _bench_job(job):
    config_dict, solver, prediction, timing = job
    config = SimConfig.from_dict(config_dict)
    metrics = run_simulation(generate_synthetic(config), solver, config,
                             prediction=prediction, timing=timing)
    return sum(m.quality for m in metrics), sum(m.wall_ms for m in metrics)


def _parse_vary(text: str):
    if "=" not in text:
        raise ValueError("--vary expects NAME=v1,v2,...")
    name, vals = text.split("=", 1)
    name = name.strip().replace("-", "_")
    if name not in {f for f in SimConfig().to_dict()}:
        raise ValueError(f"unknown sweep axis {name!r}")
    default = SimConfig().to_dict()[name]
    if isinstance(default, tuple):
        raise ValueError(f"axis {name!r} is a range; sweep scalar parameters only")
    cast = type(default)
    return name, [cast(v) for v in vals.split(",") if v.strip()]


def cmd_bench(args) -> int:
    config = resolve_config(args)
    try:
        axis, values = _parse_vary(args.vary) if args.vary else ("seed", [config.seed])
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    solvers = args.solvers.split(",")
    jobs, cells = [], []
    for value in values:
        for solver in solvers:
            cells.append((value, solver))
            for r in range(args.reps):
                cfg = config.updated(**{axis: value}) if axis != "seed" else config
                cfg = cfg.updated(seed=cfg.seed + r)
                jobs.append((cfg.to_dict(), solver, args.prediction == "on", args.timing))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_bench_job, jobs))
    else:
        results = [_bench_job(j) for j in jobs]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["axis", "value", "solver", "runs", "quality_mean", "quality_std",
                     "wall_ms_mean", "wall_ms_std"])
    means: Dict[str, List[float]] = {}
    for k, (value, solver) in enumerate(cells):
        chunk = results[k * args.reps:(k + 1) * args.reps]
        q = [c[0] for c in chunk]
        t = [c[1] for c in chunk]
        sd = lambda xs: statistics.pstdev(xs) if len(xs) > 1 else 0.0
        writer.writerow([axis, value, solver, len(chunk), repr(statistics.fmean(q)), repr(sd(q)),
                         repr(statistics.fmean(t)), repr(sd(t))])
        means.setdefault(solver, []).append(statistics.fmean(q))
    _write(buf.getvalue(), args.out)
    if args.check_monotone:
        if axis != "B" or values != sorted(values):
            log.error("monotonicity check needs an ascending sweep over B")
            return 3
        for solver, qs in means.items():
            if any(b < a - 1e-9 for a, b in zip(qs, qs[1:])):
                log.error("mean quality of %s is not non-decreasing in B: %s", solver, qs)
                return 4
    return 0


def cmd_predict_eval(args) -> int:
    config = resolve_config(args)
    if args.workload:
        stream = _load_stream(args, config)
    elif args.arrivals == "synthetic":
        stream = generate_synthetic(config)
    else:
        stream = rate_stream(config.gamma, args.rate, config.R, config.seed, args.arrivals, config)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["w", "instance", "rel_err_workers", "rel_err_tasks"])
    for w in args.windows:
        for p, ew, et in evaluate_prediction(stream, w, config.gamma):
            writer.writerow([w, p, repr(ew), repr(et)])
    _write(buf.getvalue(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mqa", description="Budget-constrained spatial task assignment")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic workload as JSON lines")
    _add_config_flags(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="simulate and write a per-instance report")
    _add_config_flags(p)
    p.add_argument("--workload", help="JSON-lines workload (default: generate)")
    p.add_argument("--solver", choices=["greedy", "dnc", "random", "bb"], default="greedy")
    p.add_argument("--prediction", choices=["on", "off"], default="on")
    p.add_argument("--adaptive", choices=["on", "off"], default="off")
    p.add_argument("--timing", action="store_true", help="record wall time (reports stop being reproducible)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="parameter sweep with repetitions")
    _add_config_flags(p)
    p.add_argument("--vary", help="NAME=v1,v2,... (e.g. B=100,200,300)")
    p.add_argument("--solvers", default="greedy,dnc,random")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--prediction", choices=["on", "off"], default="on")
    p.add_argument("--timing", action="store_true")
    p.add_argument("--check-monotone", action="store_true",
                   help="fail unless mean quality is non-decreasing along a B sweep")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("predict-eval", help="forecast error per window size and instance")
    _add_config_flags(p, window_flag=False)
    p.add_argument("--workload")
    p.add_argument("--arrivals", choices=["synthetic", "stationary", "random-walk"], default="synthetic")
    p.add_argument("--rate", type=float, default=20.0, help="per-cell arrival rate")
    p.add_argument("--w", dest="windows", type=_windows, default=_windows("1..5"),
                   help="window sizes to evaluate, N or A..B (default 1..5)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_predict_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("MQA_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SizeGuardError as exc:
        log.error("%s", exc)
        return 3
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
