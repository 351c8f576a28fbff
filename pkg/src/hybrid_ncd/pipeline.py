"""SLIP end-to-end helpers, from oracle training data to the fitted hybrid model.

They connect the simulator to NCD and hold the settings shared by the
demos and the acceptance tests.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import slip
from .errors import ParameterError
from .lifting import BasisSpec, make_basis
from .ncd import HybridModel, ModeLabeling, NcdConfig, NcdResult, Trajectory, fit_mode_models, run_ncd

# vertical position and velocity: the local fits ignore the drifting horizontal positions
SLIP_LOCAL_CHANNELS = [slip.ZM, slip.ZD]


def slip_ncd_config(**overrides) -> NcdConfig:
    """Segmentation settings for 1 kHz SLIP logs."""
    base = dict(window_len=10, stride=5, local_channels=list(SLIP_LOCAL_CHANNELS))
    base.update(overrides)
    return NcdConfig(**base)


def slip_model_basis() -> BasisSpec:
    """Lifting of ``[state, control]`` for the per-mode models.

    Quadratic in everything except the absolute mass position, which the
    translation shift removes anyway.
    """
    return make_basis(7, quadratic=range(1, 7), constant_term=True)


@dataclass
class TrainingSpec:
    """Oracle-controlled data generation.

    Exploration adds piecewise-constant random offsets to both inputs so the
    learned models see how thrust and toe commands move the state.
    """

    duration: float = 30.0
    v_target: float = 0.4
    apex_target: float = 1.6
    z0: float = 2.0
    explore_stance: float = 3.0
    explore_flight: float = 0.5
    control_period: int = 10
    seed: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def generate_training_data(spec: TrainingSpec = TrainingSpec(), params: slip.SlipParams = slip.SlipParams()):
    ctrl = slip.RaibertController(
        params,
        v_target=spec.v_target,
        apex_target=spec.apex_target,
        explore_stance=spec.explore_stance,
        explore_flight=spec.explore_flight,
        seed=spec.seed,
    )
    return slip.simulate(slip.state(z_m=spec.z0), ctrl, spec.duration, params, control_period=spec.control_period)


@dataclass
class ModelSpec:
    """Per-mode model fit on SLIP logs.

    ``period`` is the model step in plant samples; the log is decimated to
    that rate so every pair sees one held control.  ``boundary_margin``
    (in decimated samples) drops pairs next to a label change.
    """

    period: int = 10
    ridge: float = 1e-8
    boundary_margin: int = 2
    basis: BasisSpec = field(default_factory=slip_model_basis)


def fit_slip_hybrid(sim: slip.SimResult, labels, indicator, spec: ModelSpec = ModelSpec()) -> HybridModel:
    """Fit stance/flight operators on a decimated log with its mode labels."""
    labels = labels.labels if isinstance(labels, ModeLabeling) else np.asarray(labels, dtype=int)
    if len(labels) != len(sim.states):
        raise ParameterError("labels must cover every logged state")
    idx = np.arange(0, len(sim.states), spec.period)
    traj = Trajectory(sim.states[idx], sim.dt * spec.period, slip.STATE_NAMES)
    return fit_mode_models(
        traj,
        labels[idx],
        spec.basis,
        spec.ridge,
        indicator=indicator,
        controls=sim.padded_controls()[idx],
        shift_channels=(slip.XM, slip.XT),
        boundary_margin=spec.boundary_margin,
    )


def learn_slip_model(
    sim: slip.SimResult,
    ncd_config: NcdConfig | None = None,
    model_spec: ModelSpec = ModelSpec(),
) -> tuple[NcdResult, HybridModel]:
    """Segment a SLIP log with NCD and fit the hybrid model on its labels."""
    res = run_ncd(Trajectory(sim.states, sim.dt, slip.STATE_NAMES), ncd_config or slip_ncd_config())
    return res, fit_slip_hybrid(sim, res.labeling, res.indicator, model_spec)


def align_modes(pred, truth) -> tuple[np.ndarray, dict]:
    """Map each predicted class to the true mode it most often coincides with."""
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    mapping = {}
    for c in np.unique(pred[pred >= 0]):
        mapping[int(c)] = int(np.bincount(truth[pred == c]).argmax())
    out = np.array([mapping.get(int(c), -1) for c in pred], dtype=int)
    return out, mapping
