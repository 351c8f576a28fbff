"""Gait segmentation with NCD and validation against foot-pressure events.

Kinematic channels (joint angles and velocities plus motor currents) feed NCD;
heel and toe pressure channels are kept in a separate container and used
only to derive ground-truth contact events.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import LoadError, ParameterError
from .ncd import ModeLabeling, NcdConfig, NcdResult, Trajectory, run_ncd

log = logging.getLogger(__name__)

SIDES = ("right", "left")
KINEMATIC_CHANNELS = tuple(
    f"{side}_{joint}_{quantity}"
    for quantity in ("angle", "velocity", "current")
    for joint in ("knee", "hip")
    for side in SIDES
)
PRESSURE_CHANNELS = ("right_heel", "left_heel", "right_toe", "left_toe")


@dataclass(frozen=True)
class GaitSchema:
    time: str = "time"
    kinematics: tuple = KINEMATIC_CHANNELS
    pressure: tuple = PRESSURE_CHANNELS
    trim_seconds: float = 10.0
    max_jitter: float = 0.01

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaitSchema":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown gait schema keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class PressureChannels:
    """Analog foot-pressure signals; deliberately not a :class:`Trajectory`."""

    names: tuple
    values: np.ndarray

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise ParameterError(f"no pressure channel {name!r}") from None


@dataclass(frozen=True)
class GaitRecord:
    kinematics: Trajectory
    pressure: PressureChannels | None
    subject: str = ""
    trim: tuple = (0, 0)

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.kinematics.dt

    def __len__(self) -> int:
        return len(self.kinematics)

    def window(self, start: int, stop: int) -> "GaitRecord":
        p = None if self.pressure is None else PressureChannels(self.pressure.names, self.pressure.values[start:stop])
        return GaitRecord(self.kinematics.slice(start, stop), p, self.subject, (self.trim[0] + start, self.trim[0] + stop))


def load_gait_csv(path, schema: GaitSchema = GaitSchema(), *, require_pressure: bool = True, subject: str = "") -> GaitRecord:
    """Read and validate a gait log; the first ``schema.trim_seconds`` are dropped.

    Row numbers in error messages count data rows from 1 (the header is not
    counted).
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    if not header:
        raise LoadError(f"{path}: empty file")
    header = [h.strip() for h in header]
    needed = [schema.time, *schema.kinematics] + (list(schema.pressure) if require_pressure else [])
    missing = [c for c in needed if c not in header]
    if missing:
        raise LoadError(f"{path}: missing column(s) {', '.join(missing)}")
    if not rows:
        raise LoadError(f"{path}: no data rows")
    has_pressure = all(c in header for c in schema.pressure)
    cols = [schema.time, *schema.kinematics] + (list(schema.pressure) if has_pressure else [])
    idx = [header.index(c) for c in cols]
    data = np.empty((len(rows), len(cols)))
    for r, row in enumerate(rows, start=1):
        try:
            data[r - 1] = [float(row[i]) for i in idx]
        except (ValueError, IndexError) as exc:
            raise LoadError(f"{path}: row {r}: {exc}") from exc
    bad = np.flatnonzero(~np.all(np.isfinite(data), axis=1)) + 1
    if bad.size:
        raise LoadError(f"{path}: non-finite values in row(s) {', '.join(map(str, bad[:10]))}")
    t = data[:, 0]
    if len(t) < 3:
        raise LoadError(f"{path}: need at least three rows")
    steps = np.diff(t)
    dt = float(np.median(steps))
    if not dt > 0:
        raise LoadError(f"{path}: timestamps must increase")
    off = np.flatnonzero(np.abs(steps - dt) > schema.max_jitter * dt) + 2
    if off.size:
        raise LoadError(f"{path}: non-uniform timestamps at row(s) {', '.join(map(str, off[:10]))}")
    start = int(np.searchsorted(t - t[0], schema.trim_seconds - 0.5 * dt))
    if start >= len(t) - 1:
        raise LoadError(f"{path}: recording shorter than the {schema.trim_seconds} s warm-up trim")
    kin = Trajectory(data[start:, 1 : 1 + len(schema.kinematics)], dt, tuple(schema.kinematics))
    pressure = None
    if has_pressure:
        pressure = PressureChannels(tuple(schema.pressure), data[start:, 1 + len(schema.kinematics) :].copy())
    return GaitRecord(kin, pressure, subject, (start, len(t)))


def write_gait_csv(path, record: GaitRecord, schema: GaitSchema = GaitSchema()) -> None:
    n = len(record)
    cols = [record.kinematics.samples]
    names = list(schema.kinematics)
    if record.pressure is not None:
        cols.append(record.pressure.values)
        names += list(schema.pressure)
    data = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([schema.time, *names])
        for i in range(n):
            w.writerow([f"{i * record.kinematics.dt:.9g}", *(f"{v:.9g}" for v in data[i])])


def threshold_contact(signal, threshold: float | None = None, hysteresis: float | None = None) -> np.ndarray:
    """Schmitt-trigger binarisation of an analog pressure signal.

    Switches on above ``threshold + hysteresis/2`` and off below
    ``threshold - hysteresis/2``; the initial state is the side of the
    threshold the first sample lies on.  Without explicit values the
    threshold is the midpoint of the 5th and 95th percentiles and the
    hysteresis 10% of their span.
    """
    x = np.asarray(signal, dtype=float).ravel()
    if x.size == 0:
        return np.zeros(0, dtype=int)
    if threshold is None or hysteresis is None:
        lo, hi = np.percentile(x, [5, 95])
        threshold = 0.5 * (lo + hi) if threshold is None else threshold
        hysteresis = 0.1 * (hi - lo) if hysteresis is None else hysteresis
    if hysteresis < 0:
        raise ParameterError("hysteresis must be non-negative")
    up, down = threshold + hysteresis / 2, threshold - hysteresis / 2
    out = np.empty(x.size, dtype=int)
    state = int(x[0] > threshold)
    for i, v in enumerate(x):
        if state and v < down:
            state = 0
        elif not state and v > up:
            state = 1
        out[i] = state
    return out


def _check_binary(b, name):
    b = np.asarray(b)
    if b.size and not np.all((b == 0) | (b == 1)):
        raise ParameterError(f"{name} must contain only 0 and 1")
    return b.astype(int)


def rising_edges(b) -> np.ndarray:
    b = _check_binary(b, "signal")
    return np.flatnonzero((b[1:] == 1) & (b[:-1] == 0)) + 1


def falling_edges(b) -> np.ndarray:
    b = _check_binary(b, "signal")
    return np.flatnonzero((b[1:] == 0) & (b[:-1] == 1)) + 1


@dataclass
class ContactEvents:
    """Heel strikes and toe-offs as ``(side, sample)`` tuples."""

    heel_strikes: list = field(default_factory=list)
    toe_offs: list = field(default_factory=list)

    def __add__(self, other: "ContactEvents") -> "ContactEvents":
        return ContactEvents(
            sorted(self.heel_strikes + other.heel_strikes, key=lambda e: (e[1], e[0])),
            sorted(self.toe_offs + other.toe_offs, key=lambda e: (e[1], e[0])),
        )

    def indices(self, kind: str, side: str | None = None) -> np.ndarray:
        events = self.heel_strikes if kind == "heel_strike" else self.toe_offs
        return np.array(sorted(i for s, i in events if side is None or s == side), dtype=int)

    def alternation_violations(self) -> list:
        """Per-side positions where two strikes or two toe-offs follow each other."""
        bad = []
        for side in {s for s, _ in self.heel_strikes + self.toe_offs}:
            seq = sorted([(i, "heel_strike") for s, i in self.heel_strikes if s == side] + [(i, "toe_off") for s, i in self.toe_offs if s == side])
            bad += [(side, i, kind) for (_, k0), (i, kind) in zip(seq, seq[1:]) if kind == k0]
        return sorted(bad, key=lambda e: (e[1], e[0]))

    def to_csv(self, path, sample_rate: float) -> None:
        rows = [("heel_strike", s, i) for s, i in self.heel_strikes] + [("toe_off", s, i) for s, i in self.toe_offs]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["type", "side", "sample", "time_ms"])
            for kind, side, i in sorted(rows, key=lambda r: (r[2], r[0], r[1])):
                w.writerow([kind, side, i, f"{1000.0 * i / sample_rate:.6g}"])


def detect_contact_events(heel_binary, toe_binary, side: str) -> ContactEvents:
    """Heel strikes at rising heel edges, toe-offs at falling toe edges."""
    heel = _check_binary(heel_binary, "heel channel")
    toe = _check_binary(toe_binary, "toe channel")
    return ContactEvents([(side, int(i)) for i in rising_edges(heel)], [(side, int(i)) for i in falling_edges(toe)])


def ground_truth_events(pressure: PressureChannels) -> ContactEvents:
    ev = ContactEvents()
    for side in SIDES:
        ev = ev + detect_contact_events(
            threshold_contact(pressure.channel(f"{side}_heel")),
            threshold_contact(pressure.channel(f"{side}_toe")),
            side,
        )
    return ev


def extract_mode_transitions(labeling, min_dwell: int = 1) -> list[tuple[int, int, int]]:
    """Debounced label changes as ``(sample, from_label, to_label)``.

    A change counts only when the new label then persists for at least
    ``min_dwell`` samples; shorter excursions are ignored.  Unlabelled
    samples (``-1``) neither start nor break a run.
    """
    labels = labeling.labels if isinstance(labeling, ModeLabeling) else np.asarray(labeling, dtype=int)
    if min_dwell < 1:
        raise ParameterError("min_dwell must be at least 1")
    idx = np.flatnonzero(labels >= 0)
    if idx.size == 0:
        return []
    lab = labels[idx]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(lab)) + 1])
    lengths = np.diff(np.concatenate([starts, [len(lab)]]))
    out = []
    current = None
    for s, n in zip(starts, lengths):
        if n < min_dwell:
            continue
        new = int(lab[s])
        if current is not None and new != current:
            out.append((int(idx[s]), current, new))
        current = new
    return out


@dataclass
class ValidationReport:
    n_truth: int
    n_predicted: int
    matched: int
    false_positives: int
    false_negatives: int
    offsets_ms: list

    @property
    def false_positive_rate(self) -> float:
        d = self.matched + self.false_positives
        return self.false_positives / d if d else 0.0

    @property
    def false_negative_rate(self) -> float:
        return self.false_negatives / self.n_truth if self.n_truth else 0.0

    @property
    def mean_offset_ms(self) -> float:
        return float(np.mean(self.offsets_ms)) if self.offsets_ms else float("nan")

    @property
    def mean_abs_offset_ms(self) -> float:
        return float(np.mean(np.abs(self.offsets_ms))) if self.offsets_ms else float("nan")

    @property
    def std_offset_ms(self) -> float:
        return float(np.std(self.offsets_ms)) if self.offsets_ms else float("nan")

    def to_dict(self) -> dict:
        return {
            "n_truth": self.n_truth,
            "n_predicted": self.n_predicted,
            "matched": self.matched,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "false_positive_rate": self.false_positive_rate,
            "false_negative_rate": self.false_negative_rate,
            "mean_offset_ms": _json_float(self.mean_offset_ms),
            "mean_abs_offset_ms": _json_float(self.mean_abs_offset_ms),
            "std_offset_ms": _json_float(self.std_offset_ms),
            "offsets_ms": list(self.offsets_ms),
        }


def _json_float(v: float):
    return None if not np.isfinite(v) else float(v)


def match_events(predicted, truth, max_window_ms: float = 100.0, sample_rate: float = 500.0) -> ValidationReport:
    """Greedy nearest-neighbour matching of predicted to true event samples.

    Candidate pairs within ``max_window_ms`` are accepted closest first
    (ties by earlier sample); each event is used at most once.  Offsets are
    ``predicted - truth`` in ms, so negative values anticipate the event.
    """
    p = np.asarray(predicted, dtype=int).ravel()
    t = np.asarray(truth, dtype=int).ravel()
    win = max_window_ms * sample_rate / 1000.0
    pairs = []
    for i, pv in enumerate(p):
        lo, hi = np.searchsorted(t, pv - win, "left"), np.searchsorted(t, pv + win, "right")
        for j in range(lo, hi):
            d = abs(int(pv) - int(t[j]))
            pairs.append((d, min(pv, t[j]), max(pv, t[j]), i, j))
    pairs.sort()
    used_p, used_t = set(), set()
    offsets = []
    for d, _, _, i, j in pairs:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        offsets.append((int(t[j]), 1000.0 * (int(p[i]) - int(t[j])) / sample_rate))
    offsets.sort()
    m = len(offsets)
    return ValidationReport(len(t), len(p), m, len(p) - m, len(t) - m, [o for _, o in offsets])


def gait_ncd_config(**overrides) -> NcdConfig:
    """Segmentation settings for gait logs.

    Walking always has several phases, so the root of the cluster tree is
    not allowed to win as a single cluster; the dense band of windows that
    straddle phase changes would otherwise merge the phases.
    """
    base = dict(allow_single_cluster=False)
    base.update(overrides)
    return NcdConfig(**base)


EVENT_CLASSES = tuple(f"{side}_{kind}" for kind in ("heel_strike", "toe_off") for side in SIDES)


@dataclass
class SegmentationResult:
    ncd: NcdResult
    transitions: list
    truth: ContactEvents | None
    associations: dict
    reports: dict
    window: tuple

    @property
    def labeling(self) -> ModeLabeling:
        return self.ncd.labeling

    def report_dict(self) -> dict:
        """Summary shaped like a decomposition table row set."""
        rows = []
        for event, rep in self.reports.items():
            rows.append({"event": event, **{k: v for k, v in rep.to_dict().items() if k != "offsets_ms"}})
        return {
            "phases": int(self.ncd.diagnostics["num_modes"]),
            "events": sorted(self.reports),
            "transition_types": {f"{a}->{b}": ev for (a, b), ev in sorted(self.associations.items())},
            "unassigned_transitions": sum(1 for _, a, b in self.transitions if (a, b) not in self.associations),
            "rows": rows,
            "window": list(self.window),
            "diagnostics": {k: v for k, v in self.ncd.diagnostics.items() if k != "seconds"},
        }

    def write_report(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.report_dict(), fh, indent=2)

    def write_events(self, path, sample_rate: float) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["type", "side", "sample", "time_ms"])
            for i, a, b in self.transitions:
                ev = self.associations.get((a, b), f"transition_{a}_to_{b}")
                kind, side = (ev.split("_", 1)[1], ev.split("_", 1)[0]) if ev in EVENT_CLASSES else (ev, "")
                w.writerow([kind, side, i, f"{1000.0 * i / sample_rate:.6g}"])


REPORT_FIELDS = {"phases": int, "events": list, "transition_types": dict, "unassigned_transitions": int, "rows": list}
ROW_FIELDS = {
    "event": str,
    "n_truth": int,
    "n_predicted": int,
    "matched": int,
    "false_positives": int,
    "false_negatives": int,
    "false_positive_rate": float,
    "false_negative_rate": float,
    "mean_offset_ms": (float, type(None)),
    "mean_abs_offset_ms": (float, type(None)),
    "std_offset_ms": (float, type(None)),
}


def check_report(report: dict) -> None:
    """Raise :class:`ParameterError` unless ``report`` has the segmentation report layout."""

    def check(obj, spec, where):
        for key, typ in spec.items():
            if key not in obj:
                raise ParameterError(f"{where}: missing field {key!r}")
            val = obj[key]
            ok = isinstance(val, typ) or (typ is float and isinstance(val, int))
            if not ok or isinstance(val, bool):
                raise ParameterError(f"{where}: field {key!r} has type {type(val).__name__}")

    check(report, REPORT_FIELDS, "report")
    for i, row in enumerate(report["rows"]):
        check(row, ROW_FIELDS, f"row {i}")


def segment_gait(
    record: GaitRecord,
    config: NcdConfig | None = None,
    *,
    min_dwell_ms: float = 25.0,
    max_window_ms: float = 100.0,
    match_threshold: float = 0.5,
    segment_seconds: float | None = 20.0,
    seed: int = 0,
    validate: bool = True,
) -> SegmentationResult:
    """Segment the kinematic channels and score transitions against contacts.

    A seeded random ``segment_seconds`` window of the record is analysed
    (the whole record when ``None`` or when it is shorter).  Each
    transition type ``(from, to)`` is associated with the event class it
    matches most often, provided that fraction reaches ``match_threshold``;
    among qualifying classes the smallest absolute median offset wins.
    """
    fs = record.sample_rate
    n = len(record)
    start, stop = 0, n
    if segment_seconds is not None:
        length = int(round(segment_seconds * fs))
        if length < n:
            start = int(np.random.default_rng(seed).integers(0, n - length + 1))
            stop = start + length
    rec = record.window(start, stop) if (start, stop) != (0, n) else record
    if validate and rec.pressure is None:
        raise ParameterError("validation requested but the record has no pressure channels")
    res = run_ncd(rec.kinematics, config or gait_ncd_config())
    dwell = max(1, int(round(min_dwell_ms * fs / 1000.0)))
    transitions = extract_mode_transitions(res.labeling, dwell)
    associations, reports, truth = {}, {}, None
    if validate:
        truth = ground_truth_events(rec.pressure)
        kinds = {(a, b) for _, a, b in transitions}
        for kind in sorted(kinds):
            pred = np.array([i for i, a, b in transitions if (a, b) == kind])
            best = None
            for ev in EVENT_CLASSES:
                k, side = ev.split("_", 1)[1], ev.split("_", 1)[0]
                rep = match_events(pred, truth.indices(k, side), max_window_ms, fs)
                frac = rep.matched / len(pred)
                if frac < match_threshold:
                    continue
                key = (-frac, abs(float(np.median(rep.offsets_ms))))
                if best is None or key < best[0]:
                    best = (key, ev)
            if best is not None:
                associations[kind] = best[1]
        for ev in sorted(set(associations.values())):
            k, side = ev.split("_", 1)[1], ev.split("_", 1)[0]
            pred = sorted(i for i, a, b in transitions if associations.get((a, b)) == ev)
            reports[ev] = match_events(pred, truth.indices(k, side), max_window_ms, fs)
        if not associations:
            log.warning("no transition type matched a contact event class")
    return SegmentationResult(res, transitions, truth, associations, reports, (start, stop))


def synthetic_gait(
    duration: float = 40.0,
    sample_rate: float = 500.0,
    *,
    seed: int = 0,
    step_time: tuple = (0.45, 0.65),
    damping: float = 0.95,
    noise: float = 1e-3,
    pressure_noise: float = 0.02,
) -> tuple[GaitRecord, dict]:
    """Two-phase surrogate gait from alternating linear oscillators.

    A 12-dimensional latent state made of six damped planar rotations,
    driven by white process noise, switches between two rotation-rate sets
    at random step times (right support, then left support) and is mixed
    into twelve kinematic channels.  Each switch into right support is a
    right heel strike and vice versa; toe-offs fall a fixed fraction into
    the opposite support phase.  Returns the record (untrimmed) and the true
    event samples.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    # rotation per sample (rad) of each latent plane; the phases turn opposite ways
    base = np.array([0.6, 0.8, 1.0, 1.2, 1.4, 1.6])
    angles = np.stack([base, -base])
    switches = [0]
    while switches[-1] < n:
        switches.append(switches[-1] + int(rng.uniform(*step_time) * sample_rate))
    phase = np.zeros(n, dtype=int)
    for k, (a, b) in enumerate(zip(switches, switches[1:])):
        phase[a : min(b, n)] = k % 2
    rots = []
    for th in angles:
        R = np.zeros((12, 12))
        for i, a in enumerate(th):
            c, s = np.cos(a), np.sin(a)
            R[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = [[c, -s], [s, c]]
        rots.append(damping * R)
    w = rng.normal(size=(n, 12))
    z = np.empty((n, 12))
    z[0] = w[0]
    for k in range(n - 1):
        z[k + 1] = rots[phase[k]] @ z[k] + w[k + 1]
    mix, _ = np.linalg.qr(rng.normal(size=(12, 12)))
    kin = z @ mix.T + noise * rng.normal(size=(n, 12))
    # contacts: heel loaded for the first 60% of own support, toe from 30% of
    # own support until 25% into the other side's support
    right_heel, left_heel = np.zeros(n), np.zeros(n)
    right_toe, left_toe = np.zeros(n), np.zeros(n)
    truth = {ev: [] for ev in EVENT_CLASSES}
    for k, (a, b) in enumerate(zip(switches, switches[1:])):
        side = SIDES[k % 2]
        heel = right_heel if side == "right" else left_heel
        toe = right_toe if side == "right" else left_toe
        length = b - a
        nxt = switches[k + 2] - b if k + 2 < len(switches) else length
        heel[a : min(a + int(0.6 * length), n)] = 1.0
        off = b + int(0.25 * nxt)
        toe[min(a + int(0.3 * length), n) : min(off, n)] = 1.0
        if 0 < a < n:
            truth[f"{side}_heel_strike"].append(a)
        if off < n:
            truth[f"{side}_toe_off"].append(off)
    pressure = np.stack([right_heel, left_heel, right_toe, left_toe], axis=1)
    pressure += pressure_noise * rng.normal(size=pressure.shape)
    record = GaitRecord(
        Trajectory(kin, 1.0 / sample_rate, KINEMATIC_CHANNELS),
        PressureChannels(PRESSURE_CHANNELS, pressure),
        "synthetic",
        (0, n),
    )
    return record, {k: np.array(v, dtype=int) for k, v in truth.items()}
