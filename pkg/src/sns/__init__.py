"""Gradient-free bi-objective search for invariant and adversarial stimuli.

The package couples a from-scratch CMA-ES over a generator's latent space
with Pareto ranking of stretch/squeeze losses measured on a black-box
subject, plus the post-hoc analysis suite (distance profiles, separability,
affine baselines) and a wire protocol for external evaluators.
"""

from .core import (
    ActivationState,
    ConfigError,
    EvaluatorError,
    BridgeError,
    Mode,
    ObjectiveScores,
    OptimizerError,
    ParetoRanking,
    ReferencePair,
    ReferenceSource,
    RunConfig,
    SelectionStrategy,
    SnsError,
    Stimulus,
    SubsampleSpec,
    validate_config,
)
from .engine import RunRecord, StopCriteria, run_mei, run_sns
from .optimizer import CmaEs

__all__ = [
    "ActivationState",
    "BridgeError",
    "CmaEs",
    "ConfigError",
    "EvaluatorError",
    "Mode",
    "ObjectiveScores",
    "OptimizerError",
    "ParetoRanking",
    "ReferencePair",
    "ReferenceSource",
    "RunConfig",
    "RunRecord",
    "SelectionStrategy",
    "SnsError",
    "Stimulus",
    "StopCriteria",
    "SubsampleSpec",
    "run_mei",
    "run_sns",
    "validate_config",
]

__version__ = "0.1.0"
