"""Planar spring-loaded inverted pendulum (SLIP) hopper.

State ``[x_m, xdot_m, z_m, zdot_m, x_t]``: mass position and velocity, and
the horizontal toe position.  Control ``[u_stance, u_flight]``: leg thrust
(N) during stance and toe velocity relative to the mass (m/s) during flight,
so ``u_flight = 0`` keeps the leg angle fixed in the air.

The mode is a function of the state: the hopper is in flight when the
distance from the mass to the ground point under the toe is at least the
rest leg length, and in stance otherwise.  In stance the toe is pinned and a
massless spring leg pushes along the toe-to-mass direction; in flight the
mass is ballistic and the toe moves at the commanded velocity.  Each step
integrates the dynamics of the mode at the start of the step with RK4.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CrashError, ParameterError

STANCE, FLIGHT = 0, 1
MODE_NAMES = {STANCE: "stance", FLIGHT: "flight"}
XM, XD, ZM, ZD, XT = range(5)
STATE_NAMES = ("x_m", "xdot_m", "z_m", "zdot_m", "x_t")
CONTROL_NAMES = ("u_stance", "u_flight")


@dataclass(frozen=True)
class SlipParams:
    mass: float = 1.0
    k: float = 150.0
    l0: float = 1.0
    g: float = 9.81
    dt: float = 1e-3
    u_stance_min: float = 0.0
    u_stance_max: float = 20.0
    u_flight_max: float = 3.0

    def __post_init__(self):
        for name in ("mass", "k", "l0", "g", "dt", "u_flight_max"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.u_stance_max < self.u_stance_min:
            raise ParameterError("u_stance_max must be >= u_stance_min")

    @property
    def control_low(self) -> np.ndarray:
        return np.array([self.u_stance_min, -self.u_flight_max])

    @property
    def control_high(self) -> np.ndarray:
        return np.array([self.u_stance_max, self.u_flight_max])

    def saturate(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.control_low, self.control_high)

    def to_dict(self) -> dict:
        return asdict(self)


def state(x_m=0.0, xdot_m=0.0, z_m=2.0, zdot_m=0.0, x_t=None) -> np.ndarray:
    """Build a state vector; the toe defaults to directly under the mass."""
    return np.array([x_m, xdot_m, z_m, zdot_m, x_m if x_t is None else x_t], dtype=float)


def leg_length(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return np.hypot(s[..., XM] - s[..., XT], s[..., ZM])


def true_guard(s, params: SlipParams = SlipParams()):
    """Analytic mode: ``FLIGHT`` when the leg is unloaded, else ``STANCE``.

    Works on a single state or a stack of states.
    """
    return np.where(leg_length(s) >= params.l0, FLIGHT, STANCE) if np.ndim(s) > 1 else (
        FLIGHT if leg_length(s) >= params.l0 else STANCE
    )


def energy(s, params: SlipParams = SlipParams()):
    """Total mechanical energy; spring energy counts only for a compressed leg."""
    s = np.asarray(s, dtype=float)
    comp = np.maximum(params.l0 - leg_length(s), 0.0)
    kinetic = 0.5 * params.mass * (s[..., XD] ** 2 + s[..., ZD] ** 2)
    return kinetic + params.mass * params.g * s[..., ZM] + 0.5 * params.k * comp**2


def _deriv(s, u, mode, p: SlipParams):
    d = np.empty(5)
    d[XM] = s[XD]
    d[ZM] = s[ZD]
    if mode == FLIGHT:
        d[XD] = 0.0
        d[ZD] = -p.g
        d[XT] = s[XD] + u[1]
    else:
        dx = s[XM] - s[XT]
        l = np.hypot(dx, s[ZM])
        f = (p.k * (p.l0 - l) + u[0]) / (p.mass * l)
        d[XD] = f * dx
        d[ZD] = f * s[ZM] - p.g
        d[XT] = 0.0
    return d


def slip_step(s, u, params: SlipParams = SlipParams(), mode=None) -> np.ndarray:
    """Advance one ``params.dt`` with RK4 in the mode active at the start."""
    s = np.asarray(s, dtype=float)
    u = params.saturate(u)
    if mode is None:
        mode = true_guard(s, params)
    h = params.dt
    k1 = _deriv(s, u, mode, params)
    k2 = _deriv(s + 0.5 * h * k1, u, mode, params)
    k3 = _deriv(s + 0.5 * h * k2, u, mode, params)
    k4 = _deriv(s + h * k3, u, mode, params)
    return s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class SimResult:
    """Logged run: ``states`` has one more row than ``controls``."""

    states: np.ndarray
    controls: np.ndarray
    modes: np.ndarray
    dt: float
    crashed: bool = False
    crash_time: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt

    def padded_controls(self) -> np.ndarray:
        """Controls aligned with states (last control repeated)."""
        if len(self.controls) == 0:
            return np.zeros((len(self.states), 2))
        return np.vstack([self.controls, self.controls[-1:]])

    def to_csv(self, path) -> None:
        u = self.padded_controls()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", *STATE_NAMES, *CONTROL_NAMES, "true_mode"])
            for i, (s, c, m) in enumerate(zip(self.states, u, self.modes)):
                w.writerow([f"{i * self.dt:.9g}", *(repr(float(v)) for v in s), *(repr(float(v)) for v in c), int(m)])


def read_sim_csv(path) -> SimResult:
    data = np.genfromtxt(path, delimiter=",", names=True)
    states = np.column_stack([data[n] for n in STATE_NAMES])
    controls = np.column_stack([data[n] for n in CONTROL_NAMES])[:-1]
    t = data["time"]
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return SimResult(states, controls, data["true_mode"].astype(int), dt)


def simulate(
    s0,
    controller,
    duration: float,
    params: SlipParams = SlipParams(),
    *,
    control_period: int = 1,
    raise_on_crash: bool = True,
) -> SimResult:
    """Fixed-step simulation.

    ``controller(state, t)`` returns ``[u_stance, u_flight]``; it is called
    every ``control_period`` integration steps and its output held in
    between.  A crash (``z_m <= 0``) raises :class:`CrashError` carrying the
    partial log as ``.result`` unless ``raise_on_crash`` is false.
    """
    if duration <= 0:
        raise ParameterError("duration must be positive")
    if control_period < 1:
        raise ParameterError("control_period must be at least 1")
    n = int(round(duration / params.dt))
    n = max(n, 1)
    states = np.empty((n + 1, 5))
    controls = np.empty((n, 2))
    modes = np.empty(n + 1, dtype=int)
    s = np.asarray(s0, dtype=float).copy()
    if not s[ZM] > 0:
        raise ParameterError("initial height must be positive")
    states[0] = s
    modes[0] = true_guard(s, params)
    u = np.zeros(2)
    for i in range(n):
        if i % control_period == 0:
            u = params.saturate(controller(s, i * params.dt))
        controls[i] = u
        s = slip_step(s, u, params, modes[i])
        states[i + 1] = s
        modes[i + 1] = true_guard(s, params)
        if not (s[ZM] > 0 and np.all(np.isfinite(s))):
            res = SimResult(states[: i + 2], controls[: i + 1], modes[: i + 2], params.dt, True, (i + 1) * params.dt)
            if raise_on_crash:
                err = CrashError(f"hopper crashed at t={(i + 1) * params.dt:.3f}s", time=(i + 1) * params.dt, step=i + 1)
                err.result = res
                raise err
            return res
    return SimResult(states, controls, modes, params.dt)


def zero_controller(s, t):
    return np.zeros(2)


@dataclass
class RaibertController:
    """Heuristic hopping controller used to generate training data.

    Flight: the toe is steered toward the neutral point
    ``x_m + xdot_m * stance_time / 2 + k_v (xdot_m - v_target)``, but only
    once the leg has cleared the ground, so it cannot scuff right after
    liftoff.  Stance: thrust proportional to the apex-height error implied by
    the current energy, applied while extending to add energy or while
    compressing to remove it.
    Optional seeded exploration adds piecewise-constant random offsets.
    """

    params: SlipParams = field(default_factory=SlipParams)
    v_target: float = 0.4
    apex_target: float = 1.6
    stance_time: float = 0.25
    k_v: float = 0.04
    k_toe: float = 15.0
    k_apex: float = 15.0
    clearance: float = 0.03
    explore_stance: float = 0.0
    explore_flight: float = 0.0
    explore_hold: float = 0.05
    v_schedule: tuple = ()
    seed: int = 0

    def __post_init__(self):
        self.reset()

    def reset(self):
        self._rng = np.random.default_rng(self.seed)
        self._noise = np.zeros(2)
        self._noise_until = -1.0

    def target_velocity(self, t: float) -> float:
        v = self.v_target
        for t_start, value in self.v_schedule:
            if t >= t_start:
                v = value
        return v

    def predicted_apex(self, s) -> float:
        """Apex height implied by the current energy, less the target forward kinetic energy."""
        p = self.params
        return float(energy(s, p) / (p.mass * p.g) - 0.5 * self.target_velocity(0.0) ** 2 / p.g)

    def __call__(self, s, t: float) -> np.ndarray:
        p = self.params
        s = np.asarray(s, dtype=float)
        if t >= self._noise_until and (self.explore_stance or self.explore_flight):
            self._noise = self._rng.normal(size=2) * (self.explore_stance, self.explore_flight)
            self._noise_until = t + self.explore_hold
        v_t = self.target_velocity(t)
        if true_guard(s, p) == FLIGHT:
            u_flight = self._noise[1]
            if s[ZD] < 0 or leg_length(s) > p.l0 + self.clearance:
                target = s[XM] + s[XD] * self.stance_time / 2 + self.k_v * (s[XD] - v_t)
                u_flight += self.k_toe * (target - s[XT])
            return p.saturate([0.0, u_flight])
        err = self.apex_target - self.predicted_apex(s)
        extending = s[ZD] > 0
        thrust = self.k_apex * abs(err) if (err > 0) == extending else 0.0
        return p.saturate([thrust + abs(self._noise[0]), 0.0])


def oracle_controller(s, params: SlipParams = SlipParams(), target: float = 0.4, apex: float = 1.6):
    """Stateless one-shot form of :class:`RaibertController` (no apex memory)."""
    return RaibertController(params, v_target=target, apex_target=apex)(s, 0.0)
