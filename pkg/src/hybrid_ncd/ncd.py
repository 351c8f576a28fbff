"""Nonparametric clustering of dynamics.

Pipeline: split a trajectory into equal-length time windows, fit a Koopman
operator on each window, cluster the flattened operators with HDBSCAN,
propagate window labels back to samples, and train an indicator function
mapping states to the discovered modes.  :func:`fit_mode_models` then fits
one operator per mode on within-mode snapshot pairs.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import clustering
from .errors import DimensionError, LoadError, ParameterError, PipelineError
from .indicator import IndicatorFunction, train_indicator
from .lifting import DEFAULT_RIDGE, BasisSpec, KoopmanModel, SnapshotPairs, fit_koopman, make_basis

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled multichannel time series."""

    samples: np.ndarray
    dt: float
    channels: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.array(self.samples, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or len(X) < 2:
            raise ParameterError("a trajectory needs at least two samples")
        if not np.all(np.isfinite(X)):
            raise ParameterError("trajectory samples must be finite")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        chans = tuple(self.channels) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(chans) != X.shape[1]:
            raise DimensionError(f"{len(chans)} channel names for {X.shape[1]} channels")
        X.setflags(write=False)
        object.__setattr__(self, "samples", X)
        object.__setattr__(self, "channels", chans)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def state_dim(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def select(self, channels) -> "Trajectory":
        idx = [self.channels.index(c) if isinstance(c, str) else int(c) for c in channels]
        return Trajectory(self.samples[:, idx], self.dt, tuple(self.channels[i] for i in idx))

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.samples[start:stop], self.dt, self.channels)


@dataclass(frozen=True)
class WindowingPlan:
    window_len: int = 25
    stride: int = 5

    def __post_init__(self):
        if self.window_len < 2:
            raise ParameterError("window_len must be at least 2 (one snapshot pair)")
        if self.stride < 1:
            raise ParameterError("stride must be at least 1")


def window_dataset(traj_len: int | Trajectory, plan: WindowingPlan) -> list[tuple[int, int]]:
    """Half-open index ranges of equal-length windows; a partial tail is dropped."""
    n = len(traj_len) if isinstance(traj_len, Trajectory) else int(traj_len)
    if plan.window_len > n:
        raise ParameterError(f"window_len {plan.window_len} exceeds trajectory length {n}")
    return [(a, a + plan.window_len) for a in range(0, n - plan.window_len + 1, plan.stride)]


def fit_local_models(
    traj: Trajectory,
    ranges,
    basis: BasisSpec,
    ridge: float = DEFAULT_RIDGE,
    channels=None,
) -> np.ndarray:
    """Flattened operator of every window, one row per range (order kept).

    ``channels`` optionally restricts the local fits to a subset of the
    trajectory channels; ``basis`` must then be defined over that subset.
    """
    X = traj.samples if channels is None else traj.select(channels).samples
    if X.shape[1] != basis.state_dim:
        raise DimensionError(
            f"local basis expects {basis.state_dim} channels, trajectory provides {X.shape[1]}"
        )
    Z = basis.lift(X)
    N = basis.dim
    eye = np.eye(N)
    out = np.empty((len(ranges), N * N))
    for w, (a, b) in enumerate(ranges):
        if b - a < 2:
            raise PipelineError(f"window {w} [{a}, {b}) has no snapshot pair", stage="fit_local_models")
        P, Q = Z[a : b - 1], Z[a + 1 : b]
        m = b - a - 1
        G = P.T @ P / m
        A = Q.T @ P / m
        try:
            if ridge > 0:
                K = np.linalg.solve(G + ridge * eye, A.T).T
            else:
                K = A @ np.linalg.pinv(G, hermitian=True)
        except np.linalg.LinAlgError as exc:
            raise PipelineError(f"window {w} [{a}, {b}): {exc}", stage="fit_local_models") from exc
        if not np.all(np.isfinite(K)):
            raise PipelineError(f"window {w} [{a}, {b}) produced a non-finite operator", stage="fit_local_models")
        out[w] = K.ravel()
    return out


@dataclass(frozen=True)
class ModeLabeling:
    """Per-sample mode labels with the window votes behind them."""

    labels: np.ndarray
    num_modes: int
    votes: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def to_csv(self, path, dt: float) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_index", "time", "label"])
            for i, lab in enumerate(self.labels):
                w.writerow([i, f"{i * dt:.9g}", int(lab)])

    @classmethod
    def read_csv(cls, path) -> "ModeLabeling":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        labels = np.array([int(r["label"]) for r in rows], dtype=int)
        B = int(labels.max()) + 1 if labels.size else 0
        return cls(labels, B, np.zeros((len(labels), B), dtype=int))


def propagate_labels(traj_len: int, ranges, window_labels) -> ModeLabeling:
    """Label every sample by majority vote of the non-noise windows covering it.

    Ties go to the label of the tied window whose center is nearest the
    sample (then to the lower window index).  Samples covered by no labelled
    window get ``-1``.
    """
    window_labels = np.asarray(window_labels, dtype=int)
    if len(window_labels) != len(ranges):
        raise ParameterError("need exactly one label per window")
    B = int(window_labels.max()) + 1 if window_labels.size and window_labels.max() >= 0 else 0
    votes = np.zeros((traj_len, max(B, 1)), dtype=int)
    for (a, b), lab in zip(ranges, window_labels):
        if lab >= 0:
            votes[a:b, lab] += 1
    votes = votes[:, :B]
    labels = np.full(traj_len, -1, dtype=int)
    if B == 0:
        return ModeLabeling(labels, 0, votes)
    top = votes.max(axis=1)
    covered = top > 0
    n_top = (votes == top[:, None]).sum(axis=1)
    labels[covered] = votes[covered].argmax(axis=1)
    tied = np.flatnonzero(covered & (n_top > 1))
    if tied.size:
        starts = np.array([a for a, _ in ranges])
        ends = np.array([b for _, b in ranges])
        centers = (starts + ends - 1) / 2.0
        for i in tied:
            cand = set(np.flatnonzero(votes[i] == top[i]))
            cover = np.flatnonzero((starts <= i) & (ends > i))
            cover = [w for w in cover if window_labels[w] in cand]
            best = min(cover, key=lambda w: (abs(centers[w] - i), w))
            labels[i] = window_labels[best]
    return ModeLabeling(labels, B, votes)


@dataclass
class NcdConfig:
    """Parameters of one NCD run.

    ``basis`` lifts the states used for the local window fits (restricted
    to ``local_channels`` when given); ``indicator_basis`` lifts the full
    state for the classifier and defaults to a quadratic basis.
    """

    window_len: int = 25
    stride: int = 5
    basis: BasisSpec | None = None
    local_channels: list | None = None
    ridge: float = DEFAULT_RIDGE
    min_cluster_size: int | None = None
    min_samples: int | None = None
    cluster_selection: str = "eom"
    allow_single_cluster: bool = True
    indicator_basis: BasisSpec | None = None
    svm_reg: float = 1e-4
    svm_epochs: int = 200
    svm_batch: int | None = None
    svm_max_samples: int | None = None
    seed: int = 0

    @property
    def plan(self) -> WindowingPlan:
        return WindowingPlan(self.window_len, self.stride)

    def local_basis(self, traj: Trajectory) -> BasisSpec:
        if self.basis is not None:
            return self.basis
        n = traj.state_dim if self.local_channels is None else len(self.local_channels)
        return make_basis(n, constant_term=True)

    def classifier_basis(self, traj: Trajectory) -> BasisSpec:
        if self.indicator_basis is not None:
            return self.indicator_basis
        return make_basis(traj.state_dim, quadratic=True)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("basis", "indicator_basis"):
            val = getattr(self, key)
            d[key] = None if val is None else val.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NcdConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown ncd config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("basis", "indicator_basis"):
            if d.get(key) is not None and not isinstance(d[key], BasisSpec):
                d[key] = BasisSpec.from_dict(d[key])
        return cls(**d)


@dataclass
class NcdResult:
    indicator: IndicatorFunction
    labeling: ModeLabeling
    diagnostics: dict
    ranges: list = field(repr=False, default_factory=list)
    clusters: clustering.ClusterResult | None = field(repr=False, default=None)


def run_ncd(traj: Trajectory, config: NcdConfig | None = None) -> NcdResult:
    """Window, fit local models, cluster them, label samples, train the indicator."""
    config = config or NcdConfig()
    t0 = time.perf_counter()
    ranges = window_dataset(len(traj), config.plan)
    basis = config.local_basis(traj)
    points = fit_local_models(traj, ranges, basis, config.ridge, config.local_channels)
    t1 = time.perf_counter()
    res = clustering.hdbscan(
        points,
        config.min_cluster_size,
        config.min_samples,
        cluster_selection=config.cluster_selection,
        allow_single_cluster=config.allow_single_cluster,
    )
    t2 = time.perf_counter()
    if res.num_clusters == 0:
        raise PipelineError(
            f"all {len(ranges)} windows were classified as noise; "
            "try a smaller min_cluster_size/min_samples or longer windows",
            stage="clustering",
        )
    if res.num_clusters == 1:
        log.warning("NCD found a single mode")
    labeling = propagate_labels(len(traj), ranges, res.labels)
    ind = train_indicator(
        traj.samples,
        labeling.labels,
        config.classifier_basis(traj),
        config.svm_reg,
        config.svm_epochs,
        batch=config.svm_batch,
        seed=config.seed,
        max_samples=config.svm_max_samples,
    )
    t3 = time.perf_counter()
    diagnostics = {
        "num_modes": res.num_clusters,
        "num_windows": len(ranges),
        "window_noise_fraction": res.noise_fraction,
        "sample_unlabeled_fraction": float(np.mean(labeling.labels < 0)),
        "windows_per_mode": res.counts(),
        "samples_per_mode": [int(np.sum(labeling.labels == c)) for c in range(res.num_clusters)],
        "cluster_stability": [float(s) for s in res.stability],
        "svm_train_accuracy": ind.meta["train_accuracy"],
        "seconds": {"local_fits": t1 - t0, "clustering": t2 - t1, "indicator": t3 - t2},
    }
    return NcdResult(ind, labeling, diagnostics, ranges, res)


def within_mode_pairs(labels, step: int = 1, margin: int = 0) -> dict[int, np.ndarray]:
    """Start indices ``k`` whose samples ``k - margin .. k + step + margin``
    all share one label >= 0 (the margin is clipped at the trajectory ends).
    """
    labels = np.asarray(labels, dtype=int)
    M = len(labels)
    if M <= step:
        return {}
    if margin < 0:
        raise ParameterError("margin must be non-negative")
    # first and last index of the constant-label run containing each sample
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change - 1, [M - 1]])
    run = np.repeat(np.arange(len(starts)), np.diff(np.concatenate([starts, [M]])))
    k = np.arange(M - step)
    first, last = starts[run[k]], ends[run[k]]
    ok = (labels[k] >= 0) & (k + step <= last)
    ok &= ((k - margin >= first) | (first == 0)) & ((k + step + margin <= last) | (last == M - 1))
    k = k[ok]
    return {int(c): k[labels[k] == c] for c in np.unique(labels[k])}


@dataclass(frozen=True)
class HybridModel:
    """Per-mode Koopman operators switched by an indicator function.

    The operators act on lifted ``[state, control]`` vectors when
    ``n_controls > 0``; the indicator only sees the state.  ``step`` is the
    prediction interval in trajectory samples of period ``dt``.

    ``shift_channels`` declares a group of state channels whose common
    translation leaves the dynamics unchanged (e.g. horizontal positions).
    Inputs are re-centred on the first channel of the group before lifting
    and the offset is added back to the prediction, so the operators never
    see unbounded absolute positions.
    """

    models: dict
    indicator: IndicatorFunction
    n_state: int
    n_controls: int = 0
    step: int = 1
    dt: float = 1.0
    shift_channels: tuple = ()

    def __post_init__(self):
        if not self.models:
            raise ParameterError("a hybrid model needs at least one mode")
        bases = {m.basis for m in self.models.values()}
        if len(bases) != 1:
            raise ParameterError("all mode models must share one basis")
        if self.basis.state_dim != self.n_state + self.n_controls:
            raise DimensionError("basis dimension does not match state plus control channels")
        if self.indicator.basis.state_dim != self.n_state:
            raise DimensionError("indicator must act on the state channels")
        if not set(int(c) for c in self.indicator.classes) <= set(self.models):
            raise ParameterError("indicator predicts a mode without a model")
        object.__setattr__(self, "shift_channels", tuple(int(c) for c in self.shift_channels))
        if any(not 0 <= c < self.n_state for c in self.shift_channels):
            raise DimensionError("shift_channels must index state channels")

    @property
    def basis(self) -> BasisSpec:
        return next(iter(self.models.values())).basis

    @property
    def modes(self) -> list[int]:
        return sorted(self.models)

    def operator_stack(self) -> tuple[np.ndarray, np.ndarray]:
        """Mode labels and their operators stacked as ``(B, N, N)``."""
        modes = np.array(self.modes)
        return modes, np.stack([self.models[m].K for m in modes])

    def mode(self, x) -> int:
        return int(self.indicator.classify_many(np.asarray(x, dtype=float)[None, : self.n_state])[0])

    def offsets(self, X) -> np.ndarray:
        """Per-row translation removed before lifting (zeros without a shift group)."""
        X = np.asarray(X, dtype=float)
        off = np.zeros(X.shape[:-1] + (self.n_state,))
        if self.shift_channels:
            off[..., list(self.shift_channels)] = X[..., self.shift_channels[0], None]
        return off

    def step_state(self, x, u=None) -> np.ndarray:
        """One switched prediction step from state ``x`` under control ``u``."""
        x = np.asarray(x, dtype=float)
        off = self.offsets(x)
        xc = x - off
        z = xc if self.n_controls == 0 else np.concatenate([xc, np.asarray(u, dtype=float)])
        model = self.models[self.mode(x)]
        return (model.K @ model.basis.lift(z))[: self.n_state] + off

    def save(self, path) -> None:
        arrays = self.indicator._arrays("indicator/")
        for m, km in self.models.items():
            arrays[f"K/{m}"] = km.K
        arrays["basis"] = np.array(self.basis.to_json())
        arrays["header"] = np.array(
            json.dumps(
                {
                    "format": "hybrid-v1",
                    "modes": self.modes,
                    "ridge": next(iter(self.models.values())).ridge,
                    "n_state": self.n_state,
                    "n_controls": self.n_controls,
                    "step": self.step,
                    "dt": self.dt,
                    "shift_channels": list(self.shift_channels),
                }
            )
        )
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "HybridModel":
        try:
            with np.load(path, allow_pickle=False) as f:
                head = json.loads(str(f["header"]))
                if head.get("format") != "hybrid-v1":
                    raise LoadError(f"{path}: not a hybrid-v1 model")
                basis = BasisSpec.from_json(str(f["basis"]))
                models = {int(m): KoopmanModel(f[f"K/{m}"], basis, head["ridge"]) for m in head["modes"]}
                ind = IndicatorFunction._from_arrays(f, "indicator/")
        except LoadError:
            raise
        except Exception as exc:  # any failure while decoding means a bad file
            raise LoadError(f"cannot read hybrid model from {path}: {exc}") from exc
        return cls(
            models, ind, head["n_state"], head["n_controls"], head["step"], head["dt"], tuple(head["shift_channels"])
        )


def fit_mode_models(
    traj: Trajectory,
    labeling: ModeLabeling | np.ndarray,
    basis: BasisSpec,
    ridge: float = DEFAULT_RIDGE,
    *,
    indicator: IndicatorFunction,
    controls=None,
    step: int = 1,
    min_pairs: int | None = None,
    shift_channels=(),
    boundary_margin: int = 0,
) -> HybridModel:
    """Fit one Koopman operator per mode on pairs that stay inside that mode.

    Pairs spanning a label change or touching an unlabelled sample are
    dropped, as are pairs within ``boundary_margin`` samples of a change,
    where segmentation labels are least reliable.  With ``controls`` (shape ``(M, p)``) each pair's input is the
    lifted ``[x_k, u_k]`` and ``basis`` must cover ``n + p`` channels.
    ``shift_channels`` re-centres both ends of every pair on the source
    sample's first shift channel (see :class:`HybridModel`).
    """
    labels = labeling.labels if isinstance(labeling, ModeLabeling) else np.asarray(labeling, dtype=int)
    if len(labels) != len(traj):
        raise DimensionError("labeling length differs from trajectory length")
    X = traj.samples
    n_ctrl = 0
    if controls is not None:
        U = np.asarray(controls, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        if len(U) != len(X):
            raise DimensionError("controls length differs from trajectory length")
        n_ctrl = U.shape[1]
        X = np.hstack([X, U])
    if basis.state_dim != X.shape[1]:
        raise DimensionError(f"basis expects {basis.state_dim} channels, data has {X.shape[1]}")
    need = basis.dim + 1 if min_pairs is None else min_pairs
    pairs = within_mode_pairs(labels, step, boundary_margin)
    modes = sorted(set(int(c) for c in indicator.classes) | set(pairs))
    short = {m: len(pairs.get(m, ())) for m in modes if len(pairs.get(m, ())) < need}
    if short:
        raise PipelineError(
            "; ".join(f"mode {m} has {n} within-mode pairs, needs {need}" for m, n in short.items()),
            stage="fit_mode_models",
        )
    shift = tuple(int(c) for c in shift_channels)
    off = np.zeros_like(X)
    if shift:
        off[:, list(shift)] = X[:, shift[0], None]
    models = {}
    for m in modes:
        k = pairs[m]
        models[m] = fit_koopman(SnapshotPairs(X[k] - off[k], X[k + step] - off[k]), basis, ridge)
    return HybridModel(models, indicator, traj.state_dim, n_ctrl, step, traj.dt, shift)
