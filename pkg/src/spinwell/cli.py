"""Command-line surface: run, analyze, sweep, validate-config.

Configs are YAML mappings (see README for the schema); any key can be
overridden on the command line with ``--set path.to.key=value``. Exit codes:
0 success, 2 configuration error, 3 numerical-budget failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import observables as obs, runner
from .errors import ConfigError, KrylovConvergenceError, SimulationError, TruncationBudgetError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError("--set", f"expected path=value, got {assignment!r}")
    path, value = assignment.split("=", 1)
    keys = path.split(".")
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(path, "override path crosses a non-mapping value")
    node[keys[-1]] = yaml.safe_load(value)


def load_config(path: str, overrides=()) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"no such file: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"YAML parse error: {exc}")
    if cfg is None:
        cfg = {}
    for assignment in overrides:
        _apply_override(cfg, assignment)
    return cfg


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.set or [])
    if args.output is not None:
        cfg["output_dir"] = args.output
    config = runner.config_from_dict(cfg)
    try:
        out_dir = runner.run(config)
    except (TruncationBudgetError, KrylovConvergenceError) as exc:
        print(f"numerical budget failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(out_dir)
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config, args.set or [])
    runner.config_from_dict(cfg)
    print("config ok")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set or [])
    axes = []
    for spec in args.axis:
        if "=" not in spec:
            raise ConfigError("--axis", f"expected path=v1,v2,..., got {spec!r}")
        path, values = spec.split("=", 1)
        axes.append((path, [v for v in values.split(",") if v]))
    if not axes:
        raise ConfigError("--axis", "sweep needs at least one axis")
    base_dir = Path(cfg.get("output_dir", "sweep"))
    failures = 0
    for combo in itertools.product(*(vals for _, vals in axes)):
        sub = dict(yaml.safe_load(yaml.safe_dump(cfg)))  # deep copy
        name_parts = []
        for (path, _), value in zip(axes, combo):
            _apply_override(sub, f"{path}={value}")
            name_parts.append(f"{path.split('.')[-1]}={value}")
        run_dir = base_dir / "_".join(name_parts)
        sub["output_dir"] = str(run_dir)
        config = runner.config_from_dict(sub)
        try:
            runner.run(config)
            print(run_dir)
        except (TruncationBudgetError, KrylovConvergenceError) as exc:
            failures += 1
            print(f"{run_dir}: numerical failure: {exc}", file=sys.stderr)
    return EXIT_NUMERICAL if failures else EXIT_OK


def _load_series(paths):
    series = []
    for p in paths:
        if not Path(p).exists():
            raise ConfigError("series", f"no such file: {p}")
        series.append(runner.read_series_csv(p))
    return series


def _series_velocity(series: obs.ObservableSeries) -> float:
    proto = series.metadata.get("config", {}).get("protocol", {})
    J = abs(float(proto.get("coupling", 1.0)))
    return J * np.pi / 2.0


def _analyze_qs(args, series: obs.ObservableSeries) -> dict:
    v_s = _series_velocity(series)
    cfg = series.metadata.get("config", {})
    num_sites = cfg.get("lattice", {}).get("num_sites")
    t_relax = args.t_relax if args.t_relax is not None else 5.0 / v_s
    if args.t_rec is not None:
        t_rec = args.t_rec
    elif num_sites is not None:
        t_rec = num_sites / v_s
    else:
        t_rec = float(series.times[-1])
    channels = args.channel or [c for c in series.channels if c.startswith("pop_")]
    values = {
        ch: obs.quasistationary_average(series, ch, t_relax, t_rec) for ch in channels
    }
    return {"mode": "quasistationary", "t_relax": t_relax, "t_rec": t_rec, "averages": values}


def _analyze_horizon(args, series: obs.ObservableSeries) -> dict:
    ls = sorted(
        int(name[len("Gpm_l"):]) for name in series.channels if name.startswith("Gpm_l")
    )
    if not ls:
        raise ConfigError("series", "missing channel Gpm_l*: run with transverse observables")
    gpm = np.column_stack([series.channel(f"Gpm_l{l}") for l in ls])
    front, speed = obs.horizon_front(series.times, np.array(ls), gpm, args.epsilon)
    return {
        "mode": "horizon",
        "epsilon": args.epsilon,
        "front": {str(t): f for t, f in zip(series.times, front)},
        "speed": speed,
        "speed_over_vs": speed / _series_velocity(series),
    }


def _analyze_peak(args, series: obs.ObservableSeries) -> dict:
    q_values = series.metadata.get("q_values")
    if q_values is None:
        raise ConfigError("series", "manifest lacks q_values: run with noise observables")
    q = np.array(q_values)
    prefix = "Ndelta_q" if any(c.startswith("Ndelta_q") for c in series.channels) else "delta_q"
    missing = [f"{prefix}{k}" for k in range(len(q)) if f"{prefix}{k}" not in series.channels]
    if missing:
        raise ConfigError("series", f"missing channel {missing[0]}")
    idx = int(np.argmin(np.abs(series.times - args.time)))
    spectrum = np.array([series.channel(f"{prefix}{k}")[idx] for k in range(len(q))])
    lo, hi = args.window
    window = (q >= lo) & (q <= hi)
    if not np.any(window):
        raise ConfigError("--window", "no q points inside the window")
    q_win = q[window]
    q_star = float(q_win[np.argmax(spectrum[window])])
    return {
        "mode": "peak",
        "time": float(series.times[idx]),
        "window": [lo, hi],
        "q_star": q_star,
        "q_star_over_pi": q_star / np.pi,
    }


def _analyze_diff(args, series_list) -> dict:
    if len(series_list) != 2:
        raise ConfigError("series", "diff mode needs exactly two series files")
    a, b = series_list
    common, ia, ib = np.intersect1d(
        np.round(a.times, 9), np.round(b.times, 9), return_indices=True
    )
    if len(common) == 0:
        raise ConfigError("series", "series share no sample times")
    shared = sorted(set(a.channels) & set(b.channels))
    if not shared:
        raise ConfigError("series", "series share no channels")
    devs = {
        ch: float(np.max(np.abs(a.channels[ch][ia] - b.channels[ch][ib]))) for ch in shared
    }
    return {
        "mode": "diff",
        "common_times": len(common),
        "max_abs_deviation": devs,
        "worst_channel": max(devs, key=devs.get),
        "worst_deviation": max(devs.values()),
    }


def _cmd_analyze(args) -> int:
    series_list = _load_series(args.series)
    try:
        if args.mode == "qs":
            report = _analyze_qs(args, series_list[0])
        elif args.mode == "horizon":
            report = _analyze_horizon(args, series_list[0])
        elif args.mode == "peak":
            report = _analyze_peak(args, series_list[0])
        else:
            report = _analyze_diff(args, series_list)
    except KeyError as exc:
        raise ConfigError("channel", f"missing channel: {exc}")
    report["inputs"] = [str(p) for p in args.series]
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinwell",
        description="Spin-1/2 double-well superlattice chain simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a simulation config")
    p_run.add_argument("config")
    p_run.add_argument("--set", action="append", metavar="PATH=VALUE")
    p_run.add_argument("--output", help="override output directory")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate-config", help="check a config without running")
    p_val.add_argument("config")
    p_val.add_argument("--set", action="append", metavar="PATH=VALUE")
    p_val.set_defaults(func=_cmd_validate)

    p_sweep = sub.add_parser("sweep", help="run a cartesian parameter sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--set", action="append", metavar="PATH=VALUE")
    p_sweep.add_argument("--axis", action="append", required=True, metavar="PATH=V1,V2,...")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_an = sub.add_parser("analyze", help="derive quantities from series files")
    p_an.add_argument("mode", choices=["qs", "horizon", "peak", "diff"])
    p_an.add_argument("series", nargs="+", help="series.csv paths")
    p_an.add_argument("--channel", action="append")
    p_an.add_argument("--t-relax", type=float, default=None)
    p_an.add_argument("--t-rec", type=float, default=None)
    p_an.add_argument("--epsilon", type=float, default=1e-4)
    p_an.add_argument("--time", type=float, default=0.0)
    p_an.add_argument(
        "--window", type=float, nargs=2, default=[0.1 * np.pi, 0.9 * np.pi],
        metavar=("QMIN", "QMAX"),
    )
    p_an.add_argument("--out", help="write report JSON here")
    p_an.set_defaults(func=_cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
