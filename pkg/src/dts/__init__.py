"""Draft-and-target sampling for deterministic DDIM, with closed-form mixture denoisers."""

from .diffusion import (
    EpsilonPredictor,
    FunctionPredictor,
    LatentState,
    Predictor,
    ddim_sample,
    ddim_step,
    initial_noise,
)
from .engine import (
    DraftChunk,
    DtsConfig,
    TargetBatch,
    VerificationOutcome,
    ddim_baseline,
    draft_chunk,
    dts_sample,
    target_refine,
    verify,
)
from .errors import (
    ComparisonError,
    ConfigError,
    DomainError,
    DtsError,
    NumericError,
    StepOvershootError,
)
from .gmm import (
    GmmPredictor,
    GmmSpec,
    UnitGaussianPredictor,
    corner_mixture,
    gmm_epsilon,
    mc_posterior_oracle,
)
from .metrics import CostModel, CountingPredictor, NfeLedger, RunReport, modeled_speedup, trajectory_error
from .schedule import NoiseSchedule, make_schedule

__version__ = "0.1.0"

__all__ = [
    "EpsilonPredictor",
    "FunctionPredictor",
    "LatentState",
    "Predictor",
    "ddim_sample",
    "ddim_step",
    "initial_noise",
    "DraftChunk",
    "DtsConfig",
    "TargetBatch",
    "VerificationOutcome",
    "ddim_baseline",
    "draft_chunk",
    "dts_sample",
    "target_refine",
    "verify",
    "ComparisonError",
    "ConfigError",
    "DomainError",
    "DtsError",
    "NumericError",
    "StepOvershootError",
    "GmmPredictor",
    "GmmSpec",
    "UnitGaussianPredictor",
    "corner_mixture",
    "gmm_epsilon",
    "mc_posterior_oracle",
    "CostModel",
    "CountingPredictor",
    "NfeLedger",
    "RunReport",
    "modeled_speedup",
    "trajectory_error",
    "NoiseSchedule",
    "make_schedule",
]
