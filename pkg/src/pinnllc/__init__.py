"""Hard-constrained network training for a forced heat problem and
MCMC estimation of the local learning coefficient at the trained minimum."""

from .estimators import HeatPinn, LocalLearningCoefficient
from .experiment import (
    ExperimentConfig,
    config_hash,
    extrapolation_report,
    load_config,
    run_experiment,
)
from .llc import (
    LlcConfig,
    LlcEstimate,
    cross_validate_estimator,
    effective_sample_size,
    estimate_llc,
    llc_sweep,
    volume_scaling_lambda,
)
from .network import (
    Checkpoint,
    MlpArchitecture,
    default_architecture,
    hard_constrained_u,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .problem import (
    HeatIbvp,
    ResidualModel,
    ResidualPointSet,
    default_heat_problem,
    pinn_loss,
    residual,
    sample_inputs,
)
from .sampler import NutsConfig, SamplerFailure, nuts_sample
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "HeatPinn",
    "LocalLearningCoefficient",
    "ExperimentConfig",
    "config_hash",
    "extrapolation_report",
    "load_config",
    "run_experiment",
    "LlcConfig",
    "LlcEstimate",
    "cross_validate_estimator",
    "effective_sample_size",
    "estimate_llc",
    "llc_sweep",
    "volume_scaling_lambda",
    "Checkpoint",
    "MlpArchitecture",
    "default_architecture",
    "hard_constrained_u",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "HeatIbvp",
    "ResidualModel",
    "ResidualPointSet",
    "default_heat_problem",
    "pinn_loss",
    "residual",
    "sample_inputs",
    "NutsConfig",
    "SamplerFailure",
    "nuts_sample",
    "TrainConfig",
    "train",
    "__version__",
]
