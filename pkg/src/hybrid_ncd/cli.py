"""Command-line driver: ``python3 -m hybrid_ncd <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
pipeline failure (including a simulated crash, after partial outputs have
been written).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, gait, slip
from .config import RunConfig
from .errors import CrashError, DimensionError, LoadError, NcdError, ParameterError
from .lifting import make_basis
from .mpc import run_closed_loop
from .ncd import HybridModel, Trajectory, fit_mode_models, run_ncd
from .pipeline import align_modes, generate_training_data, learn_slip_model

log = logging.getLogger("hybrid_ncd.cli")

OUT_ENV = "HYBRID_NCD_OUT"
VALIDATION_ERRORS = (ParameterError, LoadError, DimensionError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _Run:
    """Output directory plus manifest bookkeeping for one invocation."""

    def __init__(self, command: str, cfg: RunConfig, out: str | None, inputs=()):
        self.command = command
        self.cfg = cfg
        self.dir = Path(out or os.environ.get(OUT_ENV) or cfg.out or Path("runs") / command)
        self.inputs = [Path(p) for p in inputs]
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.dir / name

    def write_json(self, name: str, obj) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finish(self, status: str) -> None:
        manifest = {
            "command": self.command,
            "status": status,
            "config": self.cfg.to_dict() | {"out": None},
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg.seed,
            "versions": {
                "hybrid_ncd": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "inputs": {p.name: _sha256(p) for p in self.inputs},
            "outputs": sorted(set(self.outputs)),
        }
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_long_csv(path, times, channels: dict) -> None:
    """Plot-ready rows ``time,channel,value``, channel-major."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "channel", "value"])
        for name, values in channels.items():
            for t, v in zip(times, values):
                w.writerow([f"{t:.9g}", name, repr(float(v))])


def _sim_channels(sim: slip.SimResult, extra: dict | None = None) -> dict:
    u = sim.padded_controls()
    ch = {name: sim.states[:, i] for i, name in enumerate(slip.STATE_NAMES)}
    ch |= {name: u[:, i] for i, name in enumerate(slip.CONTROL_NAMES)}
    ch["true_mode"] = sim.modes
    return ch | (extra or {})


def read_trajectory_csv(path) -> tuple[Trajectory, slip.SimResult | None]:
    """A SLIP log (recognised by its header) or a generic ``time,<channels>`` table."""
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    if not header:
        raise LoadError(f"{path}: empty file")
    header = [h.strip() for h in header]
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from exc
    if data.shape[0] < 2:
        raise LoadError(f"{path}: need at least two samples")
    if data.shape[1] != len(header):
        raise LoadError(f"{path}: {data.shape[1]} values per row but {len(header)} header names")
    if not np.all(np.isfinite(data)):
        row = int(np.flatnonzero(~np.all(np.isfinite(data), axis=1))[0]) + 1
        raise LoadError(f"{path}: non-finite value in row {row}")
    if header[0] != "time":
        raise LoadError(f"{path}: first column must be 'time'")
    dt = float(data[1, 0] - data[0, 0])
    if not dt > 0:
        raise LoadError(f"{path}: time must increase")
    if set(slip.STATE_NAMES + slip.CONTROL_NAMES) <= set(header):
        col = {n: data[:, header.index(n)] for n in header}
        states = np.column_stack([col[n] for n in slip.STATE_NAMES])
        controls = np.column_stack([col[n] for n in slip.CONTROL_NAMES])[:-1]
        modes = col["true_mode"].astype(int) if "true_mode" in col else slip.true_guard(states)
        sim = slip.SimResult(states, controls, modes, dt)
        return Trajectory(states, dt, slip.STATE_NAMES), sim
    return Trajectory(data[:, 1:], dt, tuple(header[1:])), None


# --- subcommands -----------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> int:
    run = _Run("simulate", cfg, args.out)
    try:
        sim = generate_training_data(cfg.simulate, cfg.slip)
        status = 0
    except CrashError as exc:
        sim, status = exc.result, 2
        log.error("%s; partial log written", exc)
    sim.to_csv(run.path("trajectory.csv"))
    write_long_csv(run.path("plot.csv"), sim.times, _sim_channels(sim))
    run.finish("crashed" if status else "ok")
    log.info("wrote %d samples to %s", len(sim.states), run.dir)
    return status


def cmd_ncd_fit(cfg: RunConfig, args) -> int:
    traj, sim = read_trajectory_csv(args.data)
    run = _Run("ncd-fit", cfg, args.out, [args.data])
    warnings = []
    if sim is not None:
        res, model = learn_slip_model(sim, cfg.ncd_config("slip"), cfg.model)
        mapped, mapping = align_modes(res.labeling.labels, sim.modes)
        extra = {
            "mode_mapping": {str(k): slip.MODE_NAMES[v] for k, v in mapping.items()},
            "true_mode_agreement": float(np.mean(mapped == sim.modes)),
            "indicator_vs_guard_agreement": float(np.mean(align_modes(res.indicator.classify_many(sim.states), sim.modes)[0] == sim.modes)),
        }
    else:
        res = run_ncd(traj, cfg.ncd_config("generic"))
        model = fit_mode_models(traj, res.labeling, make_basis(traj.state_dim, constant_term=True), cfg.model.ridge, indicator=res.indicator)
        extra = {}
    if res.diagnostics["num_modes"] == 1:
        warnings.append("single mode found")
        log.warning("NCD found a single mode")
    model.save(run.path("model.npz"))
    res.labeling.to_csv(run.path("labeling.csv"), traj.dt)
    diag = {k: v for k, v in res.diagnostics.items() if k != "seconds"} | extra | {"warnings": warnings}
    run.write_json("diagnostics.json", diag)
    run.finish("ok")
    log.info("B=%d, model written to %s", diag["num_modes"], run.dir)
    return 0


def cmd_mpc_run(cfg: RunConfig, args) -> int:
    model = HybridModel.load(args.model)
    if model.n_controls != 2 or model.n_state != 5:
        raise DimensionError("mpc-run needs a SLIP model with 5 states and 2 controls")
    run = _Run("mpc-run", cfg, args.out, [args.model])
    cl = cfg.closed_loop
    res = run_closed_loop(model, slip.state(xdot_m=cl.xdot0, z_m=cl.z0), cl.duration, cfg.mpc, cfg.slip)
    sim = res.sim
    sim.to_csv(run.path("trajectory.csv"))
    metrics = {k: v for k, v in res.metrics.items() if k != "wall_seconds"}
    run.write_json("metrics.json", metrics | {"cost_trace": [c["cost"] for c in res.trace]})
    cost = np.full(len(sim.states), np.nan)
    for c in res.trace:
        cost[int(round(c["t"] / sim.dt))] = c["cost"]
    extra = {"indicator_mode": model.indicator.classify_many(sim.states), "mpc_cost": cost}
    write_long_csv(run.path("plot.csv"), sim.times, _sim_channels(sim, extra))
    run.finish("crashed" if sim.crashed else "ok")
    if sim.crashed:
        log.error("closed loop crashed at t=%.3f s; metrics cover the run up to the crash", sim.crash_time)
        return 2
    log.info("mean forward velocity %.3f m/s", metrics["mean_forward_velocity"])
    return 0


def cmd_segment(cfg: RunConfig, args) -> int:
    g = cfg.gait
    validate = g.validate and not args.no_validate
    record = gait.load_gait_csv(args.data, g.schema, require_pressure=validate)
    run = _Run("segment", cfg, args.out, [args.data])
    res = gait.segment_gait(
        record,
        cfg.ncd_config("gait"),
        min_dwell_ms=g.min_dwell_ms,
        max_window_ms=g.max_window_ms,
        match_threshold=g.match_threshold,
        segment_seconds=g.segment_seconds,
        seed=cfg.seed,
        validate=validate,
    )
    res.labeling.to_csv(run.path("labeling.csv"), record.kinematics.dt)
    res.write_events(run.path("events.csv"), record.sample_rate)
    run.write_json("report.json", res.report_dict())
    run.finish("ok")
    return 0


def read_events_csv(path) -> dict:
    """Event samples keyed ``<side>_<type>`` (or ``<type>`` when side is empty)."""
    out: dict[str, list] = {}
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    for i, r in enumerate(rows, start=1):
        try:
            key = f"{r['side']}_{r['type']}" if r["side"] else r["type"]
            out.setdefault(key, []).append(int(r["sample"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise LoadError(f"{path}: row {i}: bad event row ({exc})") from exc
    return {k: sorted(v) for k, v in out.items()}


def cmd_validate_events(cfg: RunConfig, args) -> int:
    spec = cfg.validate_events
    predicted = read_events_csv(args.predicted)
    with open(args.truth, newline="") as fh:
        header = next(csv.reader(fh), [])
    fs = spec.sample_rate
    if header and header[0] == cfg.gait.schema.time:
        record = gait.load_gait_csv(args.truth, cfg.gait.schema)
        ev = gait.ground_truth_events(record.pressure)
        truth = {f"{s}_{k}": ev.indices(k, s).tolist() for k in ("heel_strike", "toe_off") for s in gait.SIDES}
        fs = record.sample_rate
    else:
        truth = read_events_csv(args.truth)
    run = _Run("validate-events", cfg, args.out, [args.predicted, args.truth])
    rows = []
    for key in sorted(set(predicted) & set(truth)):
        rep = gait.match_events(predicted[key], truth[key], spec.max_window_ms, fs)
        rows.append({"event": key} | rep.to_dict())
    unmatched = sorted(set(predicted) ^ set(truth))
    run.write_json("validation.json", {"rows": rows, "unpaired_event_types": unmatched})
    run.finish("ok")
    if not rows:
        log.warning("no event type appears in both files")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "ncd-fit": cmd_ncd_fit,
    "mpc-run": cmd_mpc_run,
    "segment": cmd_segment,
    "validate-events": cmd_validate_events,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    p = _Parser(prog="hybrid-ncd", description="Hybrid-system discovery, control and gait segmentation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="simulate the oracle-controlled hopper")
    s = sub.add_parser("ncd-fit", parents=[common], help="segment a trajectory and fit per-mode models")
    s.add_argument("data")
    s = sub.add_parser("mpc-run", parents=[common], help="closed-loop MPC with a learned hybrid model")
    s.add_argument("model")
    s = sub.add_parser("segment", parents=[common], help="segment a gait log and validate against contacts")
    s.add_argument("data")
    s.add_argument("--no-validate", action="store_true", help="segmentation only; pressure channels not needed")
    s = sub.add_parser("validate-events", parents=[common], help="score predicted events against ground truth")
    s.add_argument("predicted", help="events CSV (type,side,sample,time_ms)")
    s.add_argument("truth", help="events CSV or gait CSV with pressure channels")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise ParameterError("--seed must be non-negative")
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](cfg, args)
    except VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        return 1
    except NcdError as exc:
        log.error("%s", exc)
        return 2
    except (OSError, FloatingPointError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
