from .base import ModelHandle, TargetEvaluation
from .gaussian import GaussianTarget
from .logistic import LogisticModel, logit_evaluate, logit_simulate, logit_subsample
from .random_effects import RandomEffectsModel, re_exact_evaluate, re_is_evaluate, re_simulate
from .stochastic_volatility import (
    StochasticVolatilityModel,
    log_returns,
    sv_bpf_evaluate,
    sv_simulate,
)


def jacobian_log_ratio(model, theta_new, theta_old):
    """Log-ratio of reparameterisation Jacobians between two unconstrained points."""
    return model.log_jacobian_ratio(theta_new, theta_old)


__all__ = [
    "ModelHandle", "TargetEvaluation", "GaussianTarget", "LogisticModel", "logit_evaluate",
    "logit_simulate", "logit_subsample", "RandomEffectsModel", "re_exact_evaluate",
    "re_is_evaluate", "re_simulate", "StochasticVolatilityModel", "log_returns",
    "sv_bpf_evaluate", "sv_simulate", "jacobian_log_ratio",
]
