"""Run configuration for the command line: one JSON file with sections.

Every section is validated before any computation starts and unknown keys
are rejected.  The top-level ``seed`` is the only seed; sections may not
carry their own.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import LoadError, ParameterError
from .gait import GaitSchema, gait_ncd_config
from .lifting import BasisSpec
from .mpc import MpcConfig
from .ncd import NcdConfig
from .pipeline import ModelSpec, TrainingSpec, slip_ncd_config
from .slip import SlipParams

SECTIONS = ("seed", "out", "slip", "simulate", "ncd", "model", "mpc", "closed_loop", "gait", "validate_events")


def _reject_unknown(section: str, d: dict, allowed) -> None:
    if not isinstance(d, dict):
        raise ParameterError(f"section {section!r} must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ParameterError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")


def _build(cls, section: str, d: dict, *, exclude=("seed",)):
    allowed = [f.name for f in fields(cls) if f.name not in exclude]
    _reject_unknown(section, d, allowed)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ParameterError(f"section {section!r}: {exc}") from exc


@dataclass(frozen=True)
class ClosedLoopSpec:
    duration: float = 30.0
    z0: float = 2.0
    xdot0: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ParameterError("closed_loop.duration must be positive")
        if not self.z0 > 0:
            raise ParameterError("closed_loop.z0 must be positive")


@dataclass(frozen=True)
class GaitRunSpec:
    schema: GaitSchema = GaitSchema()
    min_dwell_ms: float = 25.0
    max_window_ms: float = 100.0
    match_threshold: float = 0.5
    segment_seconds: float | None = 20.0
    validate: bool = True

    def __post_init__(self):
        if self.min_dwell_ms < 0 or self.max_window_ms <= 0:
            raise ParameterError("gait dwell must be >= 0 and the match window positive")
        if self.segment_seconds is not None and not self.segment_seconds > 0:
            raise ParameterError("gait.segment_seconds must be positive or null")


@dataclass(frozen=True)
class EventMatchSpec:
    max_window_ms: float = 100.0
    sample_rate: float = 500.0

    def __post_init__(self):
        if not (self.max_window_ms > 0 and self.sample_rate > 0):
            raise ParameterError("validate_events values must be positive")


@dataclass
class RunConfig:
    seed: int = 0
    out: str | None = None
    slip: SlipParams = field(default_factory=SlipParams)
    simulate: TrainingSpec = field(default_factory=TrainingSpec)
    ncd: dict = field(default_factory=dict)  # overrides on top of the task default
    model: ModelSpec = field(default_factory=ModelSpec)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    closed_loop: ClosedLoopSpec = field(default_factory=ClosedLoopSpec)
    gait: GaitRunSpec = field(default_factory=GaitRunSpec)
    validate_events: EventMatchSpec = field(default_factory=EventMatchSpec)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _reject_unknown("config", d, SECTIONS)
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ParameterError("seed must be a non-negative integer")
        out = d.get("out")
        if out is not None and not isinstance(out, str):
            raise ParameterError("out must be a string")
        model = dict(d.get("model", {}))
        _reject_unknown("model", model, [f.name for f in fields(ModelSpec)])
        if "basis" in model:
            model["basis"] = BasisSpec.from_dict(model["basis"])
        mpc = dict(d.get("mpc", {}))
        if "seed" in mpc:
            raise ParameterError("unknown key(s) in 'mpc': seed (use the top-level seed)")
        gait = dict(d.get("gait", {}))
        _reject_unknown("gait", gait, [f.name for f in fields(GaitRunSpec)])
        if "schema" in gait:
            gait["schema"] = GaitSchema.from_dict(gait["schema"])
        ncd = dict(d.get("ncd", {}))
        if "seed" in ncd:
            raise ParameterError("unknown key(s) in 'ncd': seed (use the top-level seed)")
        NcdConfig.from_dict(ncd)  # key and value check
        cfg = cls(
            seed=seed,
            out=out,
            slip=_build(SlipParams, "slip", d.get("slip", {})),
            simulate=_build(TrainingSpec, "simulate", d.get("simulate", {})),
            ncd=ncd,
            model=_build(ModelSpec, "model", model),
            mpc=MpcConfig.from_dict({**mpc, "seed": seed}),
            closed_loop=_build(ClosedLoopSpec, "closed_loop", d.get("closed_loop", {})),
            gait=_build(GaitRunSpec, "gait", gait),
            validate_events=_build(EventMatchSpec, "validate_events", d.get("validate_events", {})),
        )
        return cfg.with_seed(seed)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise LoadError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            seed=seed,
            simulate=replace(self.simulate, seed=seed),
            mpc=replace(self.mpc, seed=seed),
        )

    def ncd_config(self, task: str) -> NcdConfig:
        """Task default (``slip``, ``gait`` or ``generic``) overlaid with the ``ncd`` section."""
        base = {"slip": slip_ncd_config, "gait": gait_ncd_config}.get(task, NcdConfig)()
        return NcdConfig.from_dict({**base.to_dict(), **self.ncd, "seed": self.seed})

    def to_dict(self) -> dict:
        model = asdict(self.model)
        model["basis"] = self.model.basis.to_dict()
        gait = asdict(self.gait)
        gait["schema"] = self.gait.schema.to_dict()
        sim = self.simulate.to_dict()
        sim.pop("seed")
        mpc = self.mpc.to_dict()
        mpc.pop("seed")
        return {
            "seed": self.seed,
            "out": self.out,
            "slip": self.slip.to_dict(),
            "simulate": sim,
            "ncd": dict(self.ncd),
            "model": model,
            "mpc": mpc,
            "closed_loop": asdict(self.closed_loop),
            "gait": gait,
            "validate_events": asdict(self.validate_events),
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output directory excluded)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()
