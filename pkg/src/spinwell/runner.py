"""Run orchestration: validated configuration, engine dispatch, channel
measurement, and reproducible CSV/manifest output.

A run directory contains ``series.csv`` (one row per sample time, ``time``
first), ``manifest.json`` (full config echo plus numerical bookkeeping; the
run is reproducible from the manifest alone) and an engine checkpoint of the
final state. Identical config and seed give byte-identical CSV output.
"""

from __future__ import annotations

import json
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import ed, mps, observables as obs, vbs
from .errors import ConfigError, KrylovConvergenceError, TruncationBudgetError
from .kernels import IMPLEMENTATION as KERNEL_IMPLEMENTATION
from .model import (
    CouplingSchedule,
    InitialStateSpec,
    LatticeSpec,
    ProtocolKind,
    ProtocolSpec,
    StateKind,
    SWITCH_ANGLE,
    build_schedule,
)

SCHEMA_VERSION = 1

ENGINES = ("ed", "tebd", "itebd", "vbs")

_PROTOCOL_KINDS = {
    "single": ProtocolKind.SINGLE_SWITCH,
    "periodic": ProtocolKind.PERIODIC_SWITCH,
    "homogeneous": ProtocolKind.HOMOGENEOUS_SWITCH,
}
_STATE_KINDS = {
    "triplet": StateKind.TRIPLET_PRODUCT,
    "singlet": StateKind.SINGLET_PRODUCT,
    "single_flip": StateKind.SINGLE_FLIP,
    "explicit_vbs": StateKind.EXPLICIT_VBS,
}

_SPIN_DOT_4 = 0.25 * np.diag([1.0, -1.0, -1.0, 1.0]) + 0.5 * np.array(
    [[0, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 0]], dtype=float
)


@dataclass
class RunConfig:
    lattice: LatticeSpec
    protocol: ProtocolSpec
    initial_state: InitialStateSpec
    engine: str
    times: np.ndarray
    dt_trotter: float = 0.02
    chi_max: int = 64
    sv_cutoff: float = 1e-10
    krylov_tol: float = 1e-10
    truncation_budget: float = 1e-6
    observables: dict = field(default_factory=dict)
    rng_seed: int = 0
    output_dir: Optional[Path] = None
    raw: dict = field(default_factory=dict)


def _need(section: dict, key: str, field_name: str):
    if key not in section:
        raise ConfigError(field_name, "missing required key")
    return section[key]


def config_from_dict(cfg: dict) -> RunConfig:
    """Validate a parsed configuration mapping into a RunConfig."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "configuration must be a mapping")

    lat_cfg = _need(cfg, "lattice", "lattice")
    try:
        if lat_cfg.get("infinite", False):
            lattice = LatticeSpec(infinite=True, spacing_a=lat_cfg.get("spacing", 1.0))
        else:
            lattice = LatticeSpec(
                num_sites=_need(lat_cfg, "num_sites", "lattice.num_sites"),
                spacing_a=lat_cfg.get("spacing", 1.0),
            )
    except ValueError as exc:
        raise ConfigError("lattice", str(exc)) from exc

    proto_cfg = _need(cfg, "protocol", "protocol")
    kind_name = _need(proto_cfg, "kind", "protocol.kind")
    if kind_name not in _PROTOCOL_KINDS:
        raise ConfigError("protocol.kind", f"unknown protocol {kind_name!r}")
    coupling = float(proto_cfg.get("coupling", 1.0))
    try:
        if kind_name == "periodic":
            ts_default = SWITCH_ANGLE / abs(coupling)
            protocol = ProtocolSpec(
                _PROTOCOL_KINDS[kind_name],
                coupling_J=coupling,
                switch_time_ts=float(proto_cfg.get("switch_time", ts_default)),
                num_switches=int(_need(proto_cfg, "num_switches", "protocol.num_switches")),
                total_time=proto_cfg.get("total_time"),
                timing_override=bool(proto_cfg.get("timing_override", False)),
            )
        else:
            protocol = ProtocolSpec(
                _PROTOCOL_KINDS[kind_name],
                coupling_J=coupling,
                total_time=float(_need(proto_cfg, "total_time", "protocol.total_time")),
            )
    except ValueError as exc:
        raise ConfigError("protocol", str(exc)) from exc

    st_cfg = _need(cfg, "initial_state", "initial_state")
    st_name = _need(st_cfg, "kind", "initial_state.kind")
    if st_name not in _STATE_KINDS:
        raise ConfigError("initial_state.kind", f"unknown initial state {st_name!r}")
    try:
        initial = InitialStateSpec(
            _STATE_KINDS[st_name],
            flip_site=st_cfg.get("site"),
            bonds=tuple(tuple(b) for b in st_cfg["bonds"]) if "bonds" in st_cfg else None,
            labels=tuple(st_cfg["labels"]) if "labels" in st_cfg else None,
        )
        initial.validate_for(lattice)
    except ValueError as exc:
        raise ConfigError("initial_state", str(exc)) from exc

    engine = _need(cfg, "engine", "engine")
    if engine not in ENGINES:
        raise ConfigError("engine", f"unknown engine {engine!r} (choose from {ENGINES})")
    if engine == "itebd" and not lattice.infinite:
        raise ConfigError("engine", "itebd requires the infinite lattice")
    if engine in ("ed", "tebd", "vbs") and lattice.infinite:
        raise ConfigError("engine", f"{engine} requires a finite lattice")
    if engine == "vbs" and kind_name == "homogeneous":
        raise ConfigError("engine", "the valence-bond tracker cannot evolve the homogeneous switch")
    if engine == "vbs":
        if kind_name == "single" and st_name != "triplet":
            raise ConfigError(
                "initial_state", "single-switch closed forms assume the triplet product start"
            )
        if st_name == "single_flip":
            raise ConfigError("initial_state", "the valence-bond tracker needs a bond product")

    tg = cfg.get("time_grid", {})
    start = float(tg.get("start", 0.0))
    stop = float(tg.get("stop", protocol.total_time))
    num = int(tg.get("num", 51))
    if stop > protocol.total_time + 1e-9 or start < 0 or stop <= start or num < 2:
        raise ConfigError("time_grid", "grid must satisfy 0 <= start < stop <= total_time, num >= 2")
    times = np.linspace(start, stop, num)

    observables = cfg.get("observables", {"populations": True, "energy": True})
    if not lattice.infinite:
        ent_on, ent_opts = _selection(observables, "entropies")
        for l in ent_opts.get("blocks", []) if ent_on else []:
            if not 1 <= int(l) <= lattice.num_sites - 1:
                raise ConfigError(
                    "observables.entropies.blocks",
                    f"block size {l} outside 1..{lattice.num_sites - 1}",
                )
        trans_on, trans_opts = _selection(observables, "transverse")
        if trans_on and not 1 <= int(trans_opts.get("l_max", 8)) <= lattice.num_sites - 2:
            raise ConfigError(
                "observables.transverse.l_max",
                f"distance range outside 1..{lattice.num_sites - 2}",
            )

    numerics = cfg.get("numerics", {})
    return RunConfig(
        lattice=lattice,
        protocol=protocol,
        initial_state=initial,
        engine=engine,
        times=times,
        dt_trotter=float(numerics.get("dt_trotter", 0.02)),
        chi_max=int(numerics.get("chi_max", 64)),
        sv_cutoff=float(numerics.get("sv_cutoff", 1e-10)),
        krylov_tol=float(numerics.get("krylov_tol", 1e-10)),
        truncation_budget=float(numerics.get("truncation_budget", 1e-6)),
        observables=observables,
        rng_seed=int(cfg.get("rng_seed", 0)),
        output_dir=Path(cfg["output_dir"]) if "output_dir" in cfg else None,
        raw=cfg,
    )


# ---------------------------------------------------------------------------
# channel measurement


def _energy_channels(state, lattice: LatticeSpec, J1: float, J2: float) -> dict[str, float]:
    if getattr(state, "is_infinite", False):
        e_even = float(np.real(np.trace(state.bond_rdm("even") @ _SPIN_DOT_4)))
        e_odd = float(np.real(np.trace(state.bond_rdm("odd") @ _SPIN_DOT_4)))
        per_site = -(J1 * e_even + J2 * e_odd) / 2.0
        return {"energy_per_site": per_site}
    total = 0.0
    for (i, j) in lattice.even_bonds():
        total -= J1 * float(np.real(np.trace(state.two_site_rdm(i, j) @ _SPIN_DOT_4)))
    for (i, j) in lattice.odd_bonds():
        total -= J2 * float(np.real(np.trace(state.two_site_rdm(i, j) @ _SPIN_DOT_4)))
    return {"energy": total, "energy_per_site": total / lattice.num_sites}


def _selection(sel: dict, key: str) -> tuple[bool, dict]:
    """Observable toggles accept true/false or an option mapping (possibly empty)."""
    value = sel.get(key)
    if value is None or value is False:
        return False, {}
    return True, value if isinstance(value, dict) else {}


def measure_channels(state, config: RunConfig, t: float) -> dict[str, float]:
    """Evaluate the selected observable channels on a state snapshot."""
    sel = config.observables
    out: dict[str, float] = {}
    if sel.get("populations", False):
        out.update(obs.population_channels(state))
    if sel.get("energy", False):
        J1, J2 = build_schedule(config.protocol).couplings_at(min(t, config.protocol.total_time))
        out.update(_energy_channels(state, config.lattice, J1, J2))
    ent_on, ent_opts = _selection(sel, "entropies")
    if ent_on:
        if config.lattice.infinite:
            out.update(obs.entropy_channels(state))
        else:
            out.update(obs.entropy_channels(state, ent_opts.get("blocks", [])))
    noise_on, noise_opts = _selection(sel, "noise")
    if noise_on:
        q_grid = None
        if config.lattice.infinite:
            num_q = int(noise_opts.get("num_q", 64))
            q_grid = np.linspace(0.0, np.pi / config.lattice.spacing_a, num_q)
        spectrum = obs.noise_correlations(state, q_grid, l_max=int(noise_opts.get("l_max", 30)))
        prefix = "Ndelta_q" if spectrum.scaled_by_N else "delta_q"
        for k, val in enumerate(spectrum.delta):
            out[f"{prefix}{k}"] = float(np.real(val))
    trans_on, trans_opts = _selection(sel, "transverse")
    if trans_on:
        tc = obs.transverse_correlations(state, int(trans_opts.get("l_max", 8)))
        for l, g, q in zip(tc["l"], tc["gpm"], tc["qpm"]):
            out[f"Gpm_l{l}"] = float(g)
            out[f"Qpm_l{l}"] = float(q)
    if isinstance(state, mps.MpsState):
        out["max_bond_entropy"] = state.max_bond_entropy()
        out["cumulative_truncation_error"] = state.cumulative_truncation_error
        out["trusted"] = 1.0 if state.is_trusted() else 0.0
    return out


def _noise_q_values(config: RunConfig) -> Optional[np.ndarray]:
    noise_on, noise_opts = _selection(config.observables, "noise")
    if not noise_on:
        return None
    if config.lattice.infinite:
        return np.linspace(
            0.0, np.pi / config.lattice.spacing_a, int(noise_opts.get("num_q", 64))
        )
    return obs.default_q_grid(config.lattice.num_sites, config.lattice.spacing_a)


# ---------------------------------------------------------------------------
# engine drivers


def _run_ed(config: RunConfig, recorder: obs.SeriesRecorder) -> ed.StateVector:
    schedule = build_schedule(config.protocol)
    state = ed.encode_product_state(config.initial_state, config.lattice)
    t = 0.0
    for target in config.times:
        if target > t + 1e-12:
            state = ed.propagate(state, schedule, t, target, config.krylov_tol)
            t = target
        recorder.record(t, measure_channels(state, config, t))
    return state


def _run_mps(config: RunConfig, recorder: obs.SeriesRecorder) -> mps.MpsState:
    schedule = build_schedule(config.protocol)
    state = mps.mps_from_product(
        config.initial_state, config.lattice, config.chi_max, config.sv_cutoff
    )
    requested = list(config.times)
    pending = {"idx": 0}

    def observer(t: float, live: mps.MpsState) -> None:
        idx = pending["idx"]
        fired = False
        while idx < len(requested) and requested[idx] <= t + 1e-9:
            if not fired:  # several requests inside one step share the snapshot
                recorder.record(t, measure_channels(live, config, t))
                fired = True
            idx += 1
        pending["idx"] = idx

    evolve = mps.itebd_evolve if config.lattice.infinite else mps.tebd_evolve
    # snap the step so it divides every segment of the schedule
    dt = _divisible_dt(schedule, config.times[-1], config.dt_trotter)
    final = evolve(
        state,
        schedule,
        config.times[-1],
        dt_trotter=dt,
        observer=observer,
        truncation_budget_per_time=config.truncation_budget,
    )
    return final


def _divisible_dt(schedule: CouplingSchedule, t_to: float, dt_request: float) -> float:
    """Largest dt <= dt_request that divides every schedule segment up to t_to."""
    durations = [seg.duration for seg in schedule.slice(0.0, t_to)]
    base = min(durations)
    n = max(1, math.ceil(base / dt_request))
    dt = base / n
    for d in durations:
        k = max(1, round(d / dt))
        if abs(k * dt - d) > 1e-9 * max(1.0, d):
            raise ConfigError(
                "numerics.dt_trotter",
                f"no step <= {dt_request} slices both segments of length {base} and {d}; "
                "end the time grid on a protocol switch boundary",
            )
    return dt


def _vbs_populations(state: vbs.VbsState, parity: str) -> dict[str, float]:
    bond_set = {tuple(b): lab for b, lab in zip(state.bonds, state.labels)}
    pops = {key: 0.0 for key in obs.POPULATION_KEYS}
    bonds = state.lattice.bonds(parity)
    for pair in bonds:
        label = bond_set.get(pair)
        if label == "triplet_z":
            pops["tz"] += 1.0
        elif label == "singlet":
            pops["s"] += 1.0
        else:
            for key in obs.POPULATION_KEYS:
                pops[key] += 0.25
    return {key: val / len(bonds) for key, val in pops.items()}


def _run_vbs(config: RunConfig, recorder: obs.SeriesRecorder) -> dict:
    if config.protocol.kind is ProtocolKind.SINGLE_SWITCH:
        for t in config.times:
            recorder.record(t, vbs.single_switch_observables(t, config.protocol.coupling_J))
        return {"mode": "closed-form"}
    # periodic switch: stroboscopic tracking
    state = vbs.initial_vbs(config.initial_state, config.lattice)
    ts = config.protocol.switch_time_ts
    middle = config.lattice.num_sites // 2
    q_grid = _noise_q_values(config)
    matchings = []
    parity = "odd"
    for n in range(config.protocol.num_switches + 1):
        t = n * ts
        if n > 0:
            state = vbs.apply_switch_layer(state, parity)
            parity = "even" if parity == "odd" else "odd"
        row: dict[str, float] = {"cut_entropy_middle": float(vbs.vbs_cut_entropy(state, middle))}
        for par in ("even", "odd"):
            for key, val in _vbs_populations(state, par).items():
                row[f"pop_{par}_{key}"] = val
        if q_grid is not None:
            for k, val in enumerate(vbs.vbs_noise_profile(state, q_grid)):
                row[f"delta_q{k}"] = float(val)
        recorder.record(t, row)
        matchings.append({"t": t, "bonds": state.sorted_bonds(), "labels": list(state.labels)})
    return {"mode": "stroboscopic", "matchings": matchings}


# ---------------------------------------------------------------------------
# output


def _format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_series_csv(series: obs.ObservableSeries, path: Path) -> None:
    names = list(series.channels)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["time"] + names) + "\n")
        for k, t in enumerate(series.times):
            row = [_format_float(t)] + [_format_float(series.channels[n][k]) for n in names]
            fh.write(",".join(row) + "\n")


def read_series_csv(path) -> obs.ObservableSeries:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows])
    times = data[:, 0]
    channels = {name: data[:, k + 1] for k, name in enumerate(header[1:])}
    meta_path = Path(path).parent / "manifest.json"
    metadata = {}
    if meta_path.exists():
        metadata = json.loads(meta_path.read_text())
    return obs.ObservableSeries(times, channels, metadata)


def run(config: RunConfig, output_dir=None) -> Path:
    """Execute a run and write series.csv, manifest.json and a checkpoint.

    Numerical-budget failures still produce the manifest (with the partial
    series) before the exception propagates.
    """
    out_dir = Path(output_dir) if output_dir is not None else config.output_dir
    if out_dir is None:
        raise ConfigError("output_dir", "no output directory given")
    out_dir.mkdir(parents=True, exist_ok=True)
    recorder = obs.SeriesRecorder()
    started = _time.time()
    status: dict = {"ok": True}
    extra: dict = {}
    final_state = None
    try:
        if config.engine == "ed":
            final_state = _run_ed(config, recorder)
        elif config.engine in ("tebd", "itebd"):
            final_state = _run_mps(config, recorder)
        else:
            extra = _run_vbs(config, recorder)
    except (TruncationBudgetError, KrylovConvergenceError) as exc:
        status = {"ok": False, "error": type(exc).__name__, "message": str(exc)}
        raise
    finally:
        wall = _time.time() - started
        series = recorder.finalize() if recorder._times else None
        if series is not None:
            write_series_csv(series, out_dir / "series.csv")
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "kernel": KERNEL_IMPLEMENTATION,
            "config": config.raw,
            "engine": config.engine,
            "rng_seed": config.rng_seed,
            "status": status,
            "wall_time_s": wall,
            "channels": list(series.channels) if series is not None else [],
            "requested_times": [float(t) for t in config.times],
            "actual_times": [float(t) for t in series.times] if series is not None else [],
        }
        q_values = _noise_q_values(config)
        if q_values is not None:
            manifest["q_values"] = [float(q) for q in q_values]
        if config.engine in ("tebd", "itebd") and final_state is not None:
            manifest["cumulative_truncation_error"] = final_state.cumulative_truncation_error
            manifest["final_max_bond_entropy"] = final_state.max_bond_entropy()
            manifest["trusted_final"] = final_state.is_trusted()
            manifest["trust_bound_bits"] = float(np.log2(config.chi_max) - 1.0)
            if series is not None and "trusted" in series.channels:
                flags = series.channels["trusted"]
                inside = series.times[flags > 0.5]
                manifest["trusted_until"] = float(inside[-1]) if len(inside) else 0.0
        if extra.get("matchings"):
            (out_dir / "matchings.json").write_text(
                json.dumps(extra["matchings"], indent=1, sort_keys=True)
            )
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    if config.engine == "ed" and final_state is not None:
        ed.dump_state(final_state, out_dir / "state.swsv")
    elif config.engine in ("tebd", "itebd") and final_state is not None:
        mps.dump_mps(final_state, out_dir / "checkpoint.swmps")
    return out_dir
