"""Basis-function liftings and finite Koopman operators fit by least squares.

A :class:`BasisSpec` is a declarative list of scalar observables of the state.
Lifting a state ``x`` evaluates every term, giving ``Psi(x)``.  Given snapshot
pairs ``(x_k, x_{k+1})`` the operator ``K`` minimising
``sum_k ||Psi(x_{k+1}) - K Psi(x_k)||^2`` is ``K = A G^+`` with

    G = 1/(M-1) sum_k Psi(x_k) Psi(x_k)^T
    A = 1/(M-1) sum_k Psi(x_{k+1}) Psi(x_k)^T

The normalisation by the number of pairs cancels in ``A G^+`` and only
matters for the scale at which ``ridge`` acts.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, LoadError, NumericalRankError, ParameterError

TERM_KINDS = ("identity", "product", "cube", "sin", "cos", "constant")

#: Relative eigenvalue cutoff used by the symmetric pseudoinverse.
PINV_RTOL = 1e-10
DEFAULT_RIDGE = 1e-8


@dataclass(frozen=True)
class Term:
    """One scalar observable.

    ``i``/``j`` index state channels; ``omega`` is the angular frequency of
    the trigonometric terms.
    """

    kind: str
    i: int = -1
    j: int = -1
    omega: float = 0.0

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ParameterError(f"unknown basis term kind {self.kind!r}")
        if self.kind == "constant":
            if self.i != -1 or self.j != -1:
                raise ParameterError("constant term takes no indices")
        elif self.i < 0:
            raise ParameterError(f"{self.kind} term needs a channel index")
        if self.kind == "product":
            if self.j < 0:
                raise ParameterError("product term needs two channel indices")
            if self.j < self.i:
                # canonical order so product(1, 0) and product(0, 1) are duplicates
                i, j = self.j, self.i
                object.__setattr__(self, "i", i)
                object.__setattr__(self, "j", j)
        elif self.j != -1:
            raise ParameterError(f"{self.kind} term takes a single channel index")

    def to_list(self) -> list:
        if self.kind == "constant":
            return ["constant"]
        if self.kind == "product":
            return ["product", self.i, self.j]
        if self.kind in ("sin", "cos"):
            return [self.kind, self.i, self.omega]
        return [self.kind, self.i]

    @classmethod
    def from_list(cls, item: Sequence) -> "Term":
        if not item:
            raise ParameterError("empty basis term")
        kind = item[0]
        if kind == "constant":
            return cls("constant")
        if kind == "product":
            return cls("product", int(item[1]), int(item[2]))
        if kind in ("sin", "cos"):
            omega = float(item[2]) if len(item) > 2 else 1.0
            return cls(kind, int(item[1]), omega=omega)
        return cls(kind, int(item[1]))

    def __str__(self) -> str:
        if self.kind == "constant":
            return "1"
        if self.kind == "identity":
            return f"x{self.i}"
        if self.kind == "product":
            return f"x{self.i}*x{self.j}"
        if self.kind == "cube":
            return f"x{self.i}^3"
        return f"{self.kind}({self.omega:g}*x{self.i})"


def identity(i: int) -> Term:
    return Term("identity", i)


def product(i: int, j: int) -> Term:
    return Term("product", i, j)


def cube(i: int) -> Term:
    return Term("cube", i)


def sin(i: int, omega: float = 1.0) -> Term:
    return Term("sin", i, omega=omega)


def cos(i: int, omega: float = 1.0) -> Term:
    return Term("cos", i, omega=omega)


def constant() -> Term:
    return Term("constant")


@dataclass(frozen=True)
class BasisSpec:
    """Ordered, duplicate-free list of observables over ``state_dim`` channels.

    The first ``state_dim`` terms are always the identities, so the state is
    the leading block of every lifted vector.
    """

    state_dim: int
    terms: tuple[Term, ...]
    _plan: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if self.state_dim < 1:
            raise ParameterError("state_dim must be positive")
        lead = terms[: self.state_dim]
        if len(lead) < self.state_dim or any(t != identity(k) for k, t in enumerate(lead)):
            raise ParameterError(
                f"the first {self.state_dim} terms must be identity(0..{self.state_dim - 1})"
            )
        if len(set(terms)) != len(terms):
            raise ParameterError("basis terms must be unique")
        for t in terms:
            if t.i >= self.state_dim or t.j >= self.state_dim:
                raise ParameterError(f"term {t} indexes past state_dim={self.state_dim}")
        object.__setattr__(self, "_plan", _compile(terms))

    @property
    def dim(self) -> int:
        """Lifted dimension N."""
        return len(self.terms)

    def lift(self, x) -> np.ndarray:
        """Evaluate every term at ``x``; accepts one state or a stack of states."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.ndim != 2 or X.shape[1] != self.state_dim:
            raise DimensionError(
                f"expected states with {self.state_dim} channels, got shape {x.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise ParameterError("cannot lift non-finite state")
        out = np.empty((X.shape[0], self.dim))
        p = self._plan
        out[:, p["identity"][0]] = X[:, p["identity"][1]]
        pos, a, b = p["product"]
        out[:, pos] = X[:, a] * X[:, b]
        pos, a = p["cube"]
        out[:, pos] = X[:, a] ** 3
        pos, a, w = p["sin"]
        out[:, pos] = np.sin(X[:, a] * w)
        pos, a, w = p["cos"]
        out[:, pos] = np.cos(X[:, a] * w)
        out[:, p["constant"]] = 1.0
        return out[0] if single else out

    def labels(self) -> list[str]:
        return [str(t) for t in self.terms]

    def to_dict(self) -> dict:
        return {"state_dim": self.state_dim, "terms": [t.to_list() for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        unknown = set(d) - {"state_dim", "terms"}
        if unknown:
            raise ParameterError(f"unknown basis keys: {sorted(unknown)}")
        try:
            return cls(int(d["state_dim"]), tuple(Term.from_list(t) for t in d["terms"]))
        except KeyError as exc:
            raise ParameterError(f"basis is missing key {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BasisSpec":
        return cls.from_dict(json.loads(text))


def _compile(terms: Sequence[Term]) -> dict:
    plan = {k: [] for k in TERM_KINDS}
    for pos, t in enumerate(terms):
        plan[t.kind].append((pos, t))
    ints = lambda v: np.array(v, dtype=int)  # noqa: E731
    return {
        "identity": (ints([p for p, _ in plan["identity"]]), ints([t.i for _, t in plan["identity"]])),
        "product": (
            ints([p for p, _ in plan["product"]]),
            ints([t.i for _, t in plan["product"]]),
            ints([t.j for _, t in plan["product"]]),
        ),
        "cube": (ints([p for p, _ in plan["cube"]]), ints([t.i for _, t in plan["cube"]])),
        "sin": (
            ints([p for p, _ in plan["sin"]]),
            ints([t.i for _, t in plan["sin"]]),
            np.array([t.omega for _, t in plan["sin"]], dtype=float),
        ),
        "cos": (
            ints([p for p, _ in plan["cos"]]),
            ints([t.i for _, t in plan["cos"]]),
            np.array([t.omega for _, t in plan["cos"]], dtype=float),
        ),
        "constant": ints([p for p, _ in plan["constant"]]),
    }


def make_basis(
    state_dim: int,
    *,
    quadratic: bool | Iterable[int] = False,
    cubic: bool | Iterable[int] = False,
    trig: Iterable[float] = (),
    trig_channels: Iterable[int] | None = None,
    constant_term: bool = False,
) -> BasisSpec:
    """Build a basis from the standard families.

    ``quadratic``/``cubic`` take ``True`` for all channels or an iterable of
    channel indices.  Quadratic adds all pairwise products (squares
    included) among the selected channels; ``trig`` lists frequencies for
    which sin and cos terms are added.
    """

    def channels(sel):
        if sel is True:
            return list(range(state_dim))
        if sel is False or sel is None:
            return []
        return sorted(set(int(c) for c in sel))

    terms = [identity(k) for k in range(state_dim)]
    for a, b in combinations_with_replacement(channels(quadratic), 2):
        terms.append(product(a, b))
    terms.extend(cube(k) for k in channels(cubic))
    tch = channels(True if trig_channels is None else trig_channels)
    for w in trig:
        for k in tch:
            terms.append(sin(k, w))
            terms.append(cos(k, w))
    if constant_term:
        terms.append(constant())
    return BasisSpec(state_dim, tuple(terms))


def lift(x, basis: BasisSpec) -> np.ndarray:
    """Lift one state (or a stack of states) with ``basis``."""
    return basis.lift(x)


@dataclass(frozen=True)
class SnapshotPairs:
    """Aligned arrays of states ``xs[k]`` and their successors ``ys[k]``."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        ys = np.atleast_2d(np.asarray(self.ys, dtype=float))
        if xs.shape != ys.shape:
            raise DimensionError(f"xs {xs.shape} and ys {ys.shape} differ in shape")
        if xs.shape[0] < 1:
            raise ParameterError("need at least one snapshot pair")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ParameterError("snapshot pairs must be finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @classmethod
    def from_trajectory(cls, samples, step: int = 1) -> "SnapshotPairs":
        """Consecutive pairs ``(x_k, x_{k+step})`` of a time-ordered array."""
        X = np.asarray(samples, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if len(X) <= step:
            raise ParameterError("trajectory too short to form a snapshot pair")
        return cls(X[:-step], X[step:])

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def state_dim(self) -> int:
        return self.xs.shape[1]


def gram_matrices(pairs: SnapshotPairs, basis: BasisSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(G, A)`` averaged over the pairs."""
    if pairs.state_dim != basis.state_dim:
        raise DimensionError(
            f"pairs have {pairs.state_dim} channels but the basis expects {basis.state_dim}"
        )
    px = basis.lift(pairs.xs)
    py = basis.lift(pairs.ys)
    m = len(pairs)
    return px.T @ px / m, py.T @ px / m


def sym_pinv(G: np.ndarray, rtol: float = PINV_RTOL) -> tuple[np.ndarray, int]:
    """Pseudoinverse of a symmetric PSD matrix and its numerical rank."""
    w, V = np.linalg.eigh((G + G.T) / 2)
    cutoff = rtol * max(w.max(initial=0.0), 0.0)
    keep = w > cutoff
    if not keep.any():
        return np.zeros_like(G), 0
    Vk = V[:, keep]
    return (Vk / w[keep]) @ Vk.T, int(keep.sum())


def solve_operator(
    G: np.ndarray, A: np.ndarray, ridge: float = DEFAULT_RIDGE, allow_pinv: bool = True
) -> np.ndarray:
    """``K = A (G + ridge I)^-1``, or ``A G^+`` when ``ridge == 0``."""
    if ridge < 0:
        raise ParameterError("ridge must be nonnegative")
    n = G.shape[0]
    if ridge > 0:
        return np.linalg.solve(G + ridge * np.eye(n), A.T).T
    Gp, rank = sym_pinv(G)
    if rank < n and not allow_pinv:
        raise NumericalRankError(f"Gram matrix has numerical rank {rank} < {n}")
    return A @ Gp


@dataclass(frozen=True)
class KoopmanModel:
    """Finite Koopman operator over a basis."""

    K: np.ndarray
    basis: BasisSpec
    ridge: float = 0.0

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        n = self.basis.dim
        if K.shape != (n, n):
            raise DimensionError(f"K has shape {K.shape}, basis dimension is {n}")
        if not np.all(np.isfinite(K)):
            raise ParameterError("K must be finite")

    def residual(self, pairs: SnapshotPairs) -> float:
        """Half the summed squared lifted residual (the fitted objective)."""
        return koopman_objective(self.K, pairs, self.basis)

    def step(self, x) -> np.ndarray:
        """One-step state prediction ``x_{k+1}`` from the leading block of ``K Psi(x)``."""
        z = self.basis.lift(x)
        return (z @ self.K.T)[..., : self.basis.state_dim]

    def save(self, path) -> None:
        np.savez(
            path,
            K=self.K,
            ridge=np.float64(self.ridge),
            basis=np.array(self.basis.to_json()),
            format=np.array("koopman-v1"),
        )

    @classmethod
    def load(cls, path) -> "KoopmanModel":
        try:
            with np.load(path, allow_pickle=False) as f:
                if str(f["format"]) != "koopman-v1":
                    raise LoadError(f"{path}: not a koopman-v1 file")
                return cls(f["K"], BasisSpec.from_json(str(f["basis"])), float(f["ridge"]))
        except (OSError, KeyError, ValueError) as exc:
            if isinstance(exc, LoadError):
                raise
            raise LoadError(f"cannot read Koopman model from {path}: {exc}") from exc

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.save(buf)
        return buf.getvalue()


def koopman_objective(K: np.ndarray, pairs: SnapshotPairs, basis: BasisSpec) -> float:
    px = basis.lift(pairs.xs)
    py = basis.lift(pairs.ys)
    r = py - px @ np.asarray(K).T
    return 0.5 * float(np.sum(r * r))


def fit_koopman(
    pairs: SnapshotPairs,
    basis: BasisSpec,
    ridge: float = DEFAULT_RIDGE,
    allow_pinv: bool = True,
) -> KoopmanModel:
    """Least-squares Koopman operator for ``pairs`` lifted by ``basis``."""
    G, A = gram_matrices(pairs, basis)
    return KoopmanModel(solve_operator(G, A, ridge, allow_pinv), basis, ridge)


def predict(model: KoopmanModel, x, steps: int, relift: bool = False) -> np.ndarray:
    """Iterate the operator ``steps`` times from ``Psi(x)``.

    Returns an array of shape ``(steps, state_dim)``.  By default the lifted
    vector evolves linearly; with ``relift=True`` the predicted state is
    lifted again before every step.
    """
    if steps < 1:
        raise ParameterError("steps must be positive")
    n = model.basis.state_dim
    z = model.basis.lift(x)
    out = np.empty((steps, n))
    for k in range(steps):
        with np.errstate(over="ignore", invalid="ignore"):
            z = model.K @ z
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"prediction diverged at step {k + 1}", step=k + 1)
        out[k] = z[:n]
        if relift and k + 1 < steps:
            z = model.basis.lift(z[:n])
    return out
