"""Random-shooting model predictive control on a learned hybrid Koopman model.

Each candidate control sequence is rolled out through the switched model:
the indicator picks the active mode from the current predicted state, that
mode's operator advances the lifted ``[state, control]`` vector, and the
state block is read back and re-lifted for the next step.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import slip
from .errors import CrashError, DimensionError, ParameterError
from .ncd import HybridModel

log = logging.getLogger(__name__)


@dataclass
class MpcConfig:
    """Shooting MPC settings.

    ``horizon`` counts model steps (each ``model.dt * model.step`` seconds).
    Candidates are piecewise constant over blocks of ``hold`` steps.  A
    fraction ``local_fraction`` of them are Gaussian perturbations of the
    warm start with per-channel std ``local_scale`` times the control range
    (one channel per candidate when ``local_one_channel``); the rest are
    uniform over the saturation box.
    """

    horizon: int = 40
    candidates: int = 256
    q_diag: tuple = (0.0, 50.0, 100.0, 0.0, 0.0)
    r_diag: tuple = (1e-3, 1e-2)
    x_target: tuple = (0.0, 0.4, 1.6, 0.0, 0.0)
    u_low: tuple = (0.0, -3.0)
    u_high: tuple = (20.0, 3.0)
    hold: int = 5
    warm_start: bool = True
    local_fraction: float = 0.5
    local_scale: float = 0.1
    local_one_channel: bool = True
    divergence_bound: float = 1e6
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ParameterError("horizon must be at least 1")
        if self.candidates < 1 or self.hold < 1:
            raise ParameterError("candidates and hold must be at least 1")
        if np.any(np.asarray(self.q_diag) < 0) or np.any(np.asarray(self.r_diag) < 0):
            raise ParameterError("Q and R must be entrywise non-negative")
        if len(self.u_low) != len(self.u_high) or len(self.r_diag) != len(self.u_low):
            raise DimensionError("control bounds and r_diag need one entry per control")
        if np.any(np.asarray(self.u_high) < np.asarray(self.u_low)):
            raise ParameterError("u_high must be >= u_low")
        if not 0.0 <= self.local_fraction <= 1.0:
            raise ParameterError("local_fraction must lie in [0, 1]")
        if len(self.x_target) != len(self.q_diag):
            raise DimensionError("x_target and q_diag must have the same length")

    @property
    def n_controls(self) -> int:
        return len(self.u_low)

    def target(self, t: float) -> np.ndarray:
        return np.asarray(self.x_target, dtype=float)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MpcConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown mpc config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class SwitchedRollout:
    """Predicted states ``(H+1, n)``, modes ``(H,)`` and per-step costs ``(H,)``."""

    states: np.ndarray
    modes: np.ndarray
    stage_costs: np.ndarray
    divergent: bool = False

    @property
    def total_cost(self) -> float:
        return float("inf") if self.divergent else float(self.stage_costs.sum())


def _model_interval(model: HybridModel) -> float:
    return model.dt * model.step


def rollout_batch(model: HybridModel, x0, U, bound: float = 1e6):
    """Roll out a batch of control sequences ``U`` of shape ``(C, H, p)``.

    Returns ``(states (C, H+1, n), modes (C, H), divergent (C,))``.  A
    candidate whose state leaves the ball of radius ``bound`` (or turns
    non-finite) is frozen and flagged.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        U = U[None]
    C, H, p = U.shape
    n = model.n_state
    if p != model.n_controls and model.n_controls:
        raise DimensionError(f"model expects {model.n_controls} controls, got {p}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise DimensionError(f"initial state must have {n} entries")
    modes_ids, Ks = model.operator_stack()
    basis = model.basis
    X = np.empty((C, H + 1, n))
    M = np.empty((C, H), dtype=int)
    X[:, 0] = x0
    bad = np.zeros(C, dtype=bool)
    x = np.repeat(x0[None], C, axis=0)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(H):
            m = model.indicator.classify_many(x)
            M[:, k] = m
            off = model.offsets(x)
            z = x - off if not model.n_controls else np.hstack([x - off, U[:, k]])
            Z = basis.lift(z)
            nxt = np.empty_like(x)
            for mid, K in zip(modes_ids, Ks):
                sel = m == mid
                if sel.any():
                    nxt[sel] = Z[sel] @ K[:n].T
            nxt += off
            bad |= ~np.all(np.isfinite(nxt), axis=1) | (np.linalg.norm(nxt, axis=1) > bound)
            x = np.where(bad[:, None], x, nxt)
            X[:, k + 1] = x
    return X, M, bad


def rollout(model: HybridModel, x0, controls, bound: float = 1e6, config: MpcConfig | None = None) -> SwitchedRollout:
    """Single switched rollout; stage costs are filled when ``config`` is given."""
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    X, M, bad = rollout_batch(model, x0, controls[None], bound)
    r = SwitchedRollout(X[0], M[0], np.zeros(len(controls)), bool(bad[0]))
    if config is not None:
        r.stage_costs = stage_costs(X[0], controls, config, _model_interval(model))
    return r


def stage_costs(states, controls, config: MpcConfig, dt: float, t0: float = 0.0) -> np.ndarray:
    """Per-step ``0.5 (e'Qe + u'Ru) dt`` pairing each control with the state it leads to."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    H = len(controls)
    if len(states) != H + 1:
        raise DimensionError("states must have one more row than controls")
    xd = np.stack([config.target(t0 + (k + 1) * dt) for k in range(H)])
    e = states[1:] - xd
    q = np.asarray(config.q_diag, dtype=float)
    r = np.asarray(config.r_diag, dtype=float)
    return 0.5 * ((e * e) @ q + (controls * controls) @ r) * dt


def cost(roll: SwitchedRollout, controls, config: MpcConfig, dt: float = 1.0) -> float:
    """Total quadratic cost of a rollout; infinite when it diverged."""
    if roll.divergent:
        return float("inf")
    return float(stage_costs(roll.states, controls, config, dt).sum())


class MpcController:
    """Stateful shooting controller (keeps the warm start and the RNG)."""

    def __init__(self, model: HybridModel, config: MpcConfig | None = None):
        self.model = model
        self.config = config or MpcConfig()
        if model.n_controls and model.n_controls != self.config.n_controls:
            raise DimensionError("config control bounds do not match the model")
        if len(self.config.q_diag) != model.n_state:
            raise DimensionError("q_diag length must equal the model state dimension")
        self.reset()

    def reset(self):
        self._rng = np.random.default_rng(self.config.seed)
        self._plan = None
        self.trace: list[dict] = []

    def _candidates(self) -> np.ndarray:
        cfg = self.config
        lo, hi = np.asarray(cfg.u_low, float), np.asarray(cfg.u_high, float)
        H, C, p = cfg.horizon, cfg.candidates, cfg.n_controls
        blocks = -(-H // cfg.hold)
        U = self._rng.uniform(lo, hi, size=(C, blocks, p))
        U = np.repeat(U, cfg.hold, axis=1)[:, :H]
        if cfg.warm_start and self._plan is not None:
            warm = np.vstack([self._plan[1:], self._plan[-1:]])
            n_local = int(round(cfg.local_fraction * (C - 1)))
            if n_local:
                noise = self._rng.normal(size=(n_local, blocks, p)) * (cfg.local_scale * (hi - lo))
                if cfg.local_one_channel and p > 1:
                    # perturb one channel per candidate so a good change in one
                    # input is not masked by a bad draw in another
                    noise *= np.arange(n_local)[:, None, None] % p == np.arange(p)
                U[1 : 1 + n_local] = np.clip(warm + np.repeat(noise, cfg.hold, axis=1)[:, :H], lo, hi)
            U[0] = warm
        return U

    def step(self, x, t: float = 0.0) -> np.ndarray:
        cfg = self.config
        x = np.asarray(x, dtype=float)
        U = self._candidates()
        X, M, bad = rollout_batch(self.model, x, U, cfg.divergence_bound)
        dt = _model_interval(self.model)
        q = np.asarray(cfg.q_diag, float)
        r = np.asarray(cfg.r_diag, float)
        xd = np.stack([cfg.target(t + (k + 1) * dt) for k in range(cfg.horizon)])
        e = X[:, 1:] - xd
        J = 0.5 * dt * (np.einsum("chn,n->c", e * e, q) + np.einsum("chp,p->c", U * U, r))
        J[bad | ~np.isfinite(J)] = np.inf
        if not np.isfinite(J).any():
            log.warning("all %d rollouts diverged at t=%.3f; returning zero control", len(J), t)
            self._plan = None
            self.trace.append({"t": t, "cost": float("inf"), "divergent": True})
            return np.zeros(cfg.n_controls)
        best = int(np.argmin(J))  # ties resolve to the lowest candidate index
        self._plan = U[best].copy()
        self.trace.append({"t": t, "cost": float(J[best]), "mode": int(M[best, 0]), "divergent": False})
        return U[best, 0].copy()

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        return self.step(x, t)


def mpc_step(model: HybridModel, x, config: MpcConfig | None = None) -> np.ndarray:
    """One control from a fresh controller (no warm start)."""
    return MpcController(model, config).step(x)


@dataclass
class ClosedLoopResult:
    sim: slip.SimResult
    metrics: dict
    trace: list = field(repr=False, default_factory=list)

    def write_metrics(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({**self.metrics, "cost_trace": [c["cost"] for c in self.trace]}, fh, indent=2)


def run_closed_loop(
    model: HybridModel,
    s0,
    duration: float,
    config: MpcConfig | None = None,
    params: slip.SlipParams = slip.SlipParams(),
    *,
    raise_on_crash: bool = False,
) -> ClosedLoopResult:
    """Drive the true SLIP plant with MPC decisions made on ``model`` only.

    The MPC runs once per model interval and its control is held by the
    plant for that many integration steps.  A crash ends the run; metrics
    then cover the samples up to the failure, and with ``raise_on_crash``
    a :class:`CrashError` carrying the result is raised instead.
    """
    ctrl = MpcController(model, config)
    period = int(round(_model_interval(model) / params.dt))
    if period < 1 or not np.isclose(period * params.dt, _model_interval(model)):
        raise ParameterError("model interval must be a whole number of plant steps")
    t0 = time.perf_counter()
    sim = slip.simulate(s0, ctrl, duration, params, control_period=period, raise_on_crash=False)
    elapsed = time.perf_counter() - t0
    true_modes = sim.modes
    pred_modes = model.indicator.classify_many(sim.states)
    metrics = {
        "mean_forward_velocity": float(sim.states[:, slip.XD].mean()),
        "mean_height": float(sim.states[:, slip.ZM].mean()),
        "crashed": bool(sim.crashed),
        "crash_time": sim.crash_time,
        "duration": float((len(sim.states) - 1) * params.dt),
        "stance_fraction": float(np.mean(true_modes == slip.STANCE)),
        "indicator_labels": sorted(int(c) for c in np.unique(pred_modes)),
        "mpc_calls": len(ctrl.trace),
        "divergent_calls": int(sum(c["divergent"] for c in ctrl.trace)),
        "wall_seconds": elapsed,
    }
    res = ClosedLoopResult(sim, metrics, ctrl.trace)
    if sim.crashed and raise_on_crash:
        err = CrashError(f"closed loop crashed at t={sim.crash_time:.3f}s", time=sim.crash_time)
        err.result = res
        raise err
    return res
