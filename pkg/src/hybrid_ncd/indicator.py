"""Indicator function: a linear max-margin classifier over lifted states.

The classifier maps ``Psi(x)`` to a mode label with one-vs-rest linear SVMs
trained by mini-batch Pegasos (subgradient descent on the L2-regularised
hinge loss, step ``1/(reg t)``).  Features are standardised with statistics
stored in the model.  Training is deterministic for a given seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, LoadError, ParameterError
from .lifting import BasisSpec

FORMAT = "indicator-v1"


@dataclass(frozen=True)
class IndicatorFunction:
    basis: BasisSpec
    classes: np.ndarray
    weights: np.ndarray
    biases: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("classes", "weights", "biases", "mean", "scale"):
            arr = np.array(getattr(self, name), dtype=int if name == "classes" else float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        C, N = len(self.classes), self.basis.dim
        if C < 1:
            raise ParameterError("indicator needs at least one class")
        if self.weights.shape != (C, N) or self.biases.shape != (C,):
            raise DimensionError("weight shapes do not match classes and basis")
        if self.mean.shape != (N,) or self.scale.shape != (N,):
            raise DimensionError("standardisation vectors do not match the basis")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def features(self, states) -> np.ndarray:
        return (self.basis.lift(states) - self.mean) / self.scale

    def scores(self, states) -> np.ndarray:
        return self.features(states) @ self.weights.T + self.biases

    def classify_many(self, states) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if self.num_classes == 1:
            return np.full(len(states), self.classes[0])
        return self.classes[np.argmax(self.scores(states), axis=1)]

    def __call__(self, x) -> int:
        return classify(self, x)

    def save(self, path) -> None:
        np.savez(path, **self._arrays())

    def _arrays(self, prefix: str = "") -> dict:
        return {
            prefix + "format": np.array(FORMAT),
            prefix + "basis": np.array(self.basis.to_json()),
            prefix + "classes": self.classes,
            prefix + "weights": self.weights,
            prefix + "biases": self.biases,
            prefix + "mean": self.mean,
            prefix + "scale": self.scale,
            prefix + "meta": np.array(json.dumps(self.meta)),
        }

    @classmethod
    def _from_arrays(cls, f, prefix: str = "") -> "IndicatorFunction":
        if str(f[prefix + "format"]) != FORMAT:
            raise LoadError("not an indicator-v1 archive")
        return cls(
            BasisSpec.from_json(str(f[prefix + "basis"])),
            f[prefix + "classes"],
            f[prefix + "weights"],
            f[prefix + "biases"],
            f[prefix + "mean"],
            f[prefix + "scale"],
            json.loads(str(f[prefix + "meta"])),
        )

    @classmethod
    def load(cls, path) -> "IndicatorFunction":
        try:
            with np.load(path, allow_pickle=False) as f:
                return cls._from_arrays(f)
        except (OSError, KeyError, ValueError) as exc:
            if isinstance(exc, LoadError):
                raise
            raise LoadError(f"cannot read indicator from {path}: {exc}") from exc


def classify(ind: IndicatorFunction, x) -> int:
    """Mode label of a single state; ties go to the lowest class index."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError("classify takes one state; use classify_many for batches")
    return int(ind.classify_many(x[None, :])[0])


def _pegasos(F, Y, reg, epochs, batch, rng):
    """Mini-batch Pegasos for all one-vs-rest problems at once.

    ``F`` is (M, N+1) with a trailing bias column, ``Y`` is (M, C) in {-1, +1}.
    Returns the iterate averaged over the second half of training.
    """
    M, D = F.shape
    C = Y.shape[1]
    W = np.zeros((C, D))
    avg = np.zeros((C, D))
    n_avg = 0
    radius = 1.0 / np.sqrt(reg)
    steps_per_epoch = max(1, int(np.ceil(M / batch)))
    total = epochs * steps_per_epoch
    t = 0
    for _ in range(epochs):
        order = rng.permutation(M)
        for s in range(steps_per_epoch):
            idx = order[s * batch : (s + 1) * batch]
            t += 1
            eta = 1.0 / (reg * t)
            Fb, Yb = F[idx], Y[idx]
            margin = Yb * (Fb @ W.T)
            viol = (margin < 1.0) * Yb
            W *= 1.0 - eta * reg
            W += (eta / len(idx)) * (viol.T @ Fb)
            norms = np.linalg.norm(W, axis=1)
            shrink = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
            W *= shrink[:, None]
            if 2 * t > total:
                avg += W
                n_avg += 1
    return avg / max(n_avg, 1)


def train_indicator(
    states,
    labels,
    basis: BasisSpec,
    reg: float = 1e-4,
    epochs: int = 200,
    *,
    batch: int | None = None,
    seed: int = 0,
    max_samples: int | None = None,
) -> IndicatorFunction:
    """Fit one-vs-rest linear SVMs on ``basis``-lifted states.

    Samples labelled ``-1`` are ignored.  If only one class is present the
    result always returns that class.  ``max_samples`` caps the training set
    by even (deterministic) subsampling.  ``batch`` defaults to
    ``M // 64`` clipped to ``[1, 256]`` so small problems still take many
    steps per pass.
    """
    X = np.atleast_2d(np.asarray(states, dtype=float))
    y = np.asarray(labels, dtype=int).ravel()
    if len(X) != len(y):
        raise ParameterError("states and labels differ in length")
    keep = y >= 0
    X, y = X[keep], y[keep]
    if len(y) == 0:
        raise ParameterError("no labelled samples to train on")
    if batch is None:
        batch = int(np.clip(len(y) // 64, 1, 256))
    if reg <= 0 or epochs < 1 or batch < 1:
        raise ParameterError("reg must be positive and epochs, batch at least 1")
    if max_samples is not None and len(y) > max_samples:
        sel = np.linspace(0, len(y) - 1, max_samples).round().astype(int)
        X, y = X[sel], y[sel]
    classes = np.unique(y)
    N = basis.dim
    Z = basis.lift(X)
    mean = Z.mean(axis=0)
    scale = Z.std(axis=0)
    flat = scale < 1e-12
    mean[flat] = 0.0  # keep constant features (e.g. the bias term) as they are
    scale[flat] = 1.0
    meta = {"reg": reg, "epochs": epochs, "batch": batch, "seed": seed, "n_train": int(len(y))}
    if len(classes) == 1:
        meta["train_accuracy"] = 1.0
        return IndicatorFunction(basis, classes, np.zeros((1, N)), np.zeros(1), mean, scale, meta)
    counts = np.array([np.sum(y == c) for c in classes])
    if np.any(counts < 2):
        raise ParameterError("every class needs at least two samples")
    F = np.hstack([(Z - mean) / scale, np.ones((len(y), 1))])
    Y = np.where(y[:, None] == classes[None, :], 1.0, -1.0)
    W = _pegasos(F, Y, reg, epochs, batch, np.random.default_rng(seed))
    ind = IndicatorFunction(basis, classes, W[:, :N], W[:, N], mean, scale, meta)
    meta["train_accuracy"] = float(np.mean(ind.classify_many(X) == y))
    return ind
