"""Discovery and control of hybrid systems from data.

Local Koopman fits over sliding windows are clustered into modes, an SVM
indicator learns the guard, and per-mode operators drive a switched model
usable for sampling-based MPC.  A spring-loaded inverted pendulum hopper and
a gait-segmentation workflow exercise the pipeline.
"""

__version__ = "0.1.0"

from .clustering import ClusterResult, hdbscan
from .errors import (
    CrashError,
    DimensionError,
    DivergenceError,
    LoadError,
    NcdError,
    NumericalRankError,
    ParameterError,
    PipelineError,
)
from .indicator import IndicatorFunction, classify, train_indicator
from .lifting import BasisSpec, KoopmanModel, SnapshotPairs, fit_koopman, make_basis, predict
from .ncd import (
    HybridModel,
    ModeLabeling,
    NcdConfig,
    NcdResult,
    Trajectory,
    WindowingPlan,
    fit_local_models,
    fit_mode_models,
    propagate_labels,
    run_ncd,
    window_dataset,
)
from .mpc import MpcConfig, MpcController, mpc_step, rollout, run_closed_loop
from .slip import RaibertController, SlipParams, simulate, slip_step, true_guard
from .gait import (
    GaitRecord,
    GaitSchema,
    detect_contact_events,
    extract_mode_transitions,
    load_gait_csv,
    match_events,
    segment_gait,
    threshold_contact,
)

__all__ = [
    "__version__",
    "ClusterResult",
    "hdbscan",
    "CrashError",
    "DimensionError",
    "DivergenceError",
    "LoadError",
    "NcdError",
    "NumericalRankError",
    "ParameterError",
    "PipelineError",
    "IndicatorFunction",
    "classify",
    "train_indicator",
    "BasisSpec",
    "KoopmanModel",
    "SnapshotPairs",
    "fit_koopman",
    "make_basis",
    "predict",
    "HybridModel",
    "ModeLabeling",
    "NcdConfig",
    "NcdResult",
    "Trajectory",
    "WindowingPlan",
    "fit_local_models",
    "fit_mode_models",
    "propagate_labels",
    "run_ncd",
    "window_dataset",
    "MpcConfig",
    "MpcController",
    "mpc_step",
    "rollout",
    "run_closed_loop",
    "RaibertController",
    "SlipParams",
    "simulate",
    "slip_step",
    "true_guard",
    "GaitRecord",
    "GaitSchema",
    "detect_contact_events",
    "extract_mode_transitions",
    "load_gait_csv",
    "match_events",
    "segment_gait",
    "threshold_contact",
]
