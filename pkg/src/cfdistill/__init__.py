"""Distill car-following behavior from a generative teacher into a small,
stability-constrained neural model, then analyze and evaluate it."""

__version__ = "0.1.0"

from .core import (
    A_MAX,
    A_MIN,
    DEFAULT_IDM_PARAMS,
    CfState,
    IdmModel,
    IdmParams,
    NoEquilibriumError,
    ballistic_step,
    clamp_accel,
    idm_equilibrium_spacing,
)
from .losses import LossConfig, check_param_grads, loss_and_param_grads
from .net import MlpModel, MlpSpec
from .scenarios import ScenarioSet, TruncNormSpec, generate_scenarios
from .stability import (
    AmbiguousEquilibriumError,
    EquilibriumPoint,
    EquilibriumSearchConfig,
    StabilityReport,
    analyze,
    equilibrium_at_speed,
    find_equilibria,
    monotonicity_audit,
)
from .training import TrainingConfig, fit_from_labels, split_dataset, train

__all__ = [
    "A_MAX",
    "A_MIN",
    "AmbiguousEquilibriumError",
    "CfState",
    "DEFAULT_IDM_PARAMS",
    "EquilibriumPoint",
    "EquilibriumSearchConfig",
    "IdmModel",
    "IdmParams",
    "LossConfig",
    "MlpModel",
    "MlpSpec",
    "NoEquilibriumError",
    "ScenarioSet",
    "StabilityReport",
    "TrainingConfig",
    "TruncNormSpec",
    "analyze",
    "ballistic_step",
    "check_param_grads",
    "clamp_accel",
    "equilibrium_at_speed",
    "find_equilibria",
    "fit_from_labels",
    "generate_scenarios",
    "idm_equilibrium_spacing",
    "loss_and_param_grads",
    "monotonicity_audit",
    "split_dataset",
    "train",
]
