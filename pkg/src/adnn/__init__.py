"""Adaptive multi-fidelity neural-network surrogates for Bayesian inverse problems."""

from .bayes import LogPosterior, StandardNormalPrior, log_likelihood, log_posterior, log_prior
from .field import KlField, RbfField, kl_build, kl_kappa, rbf_kappa
from .mcmc import (
    AdaptiveConfig,
    ChainStore,
    ProposalSpec,
    adaptive_run,
    error_indicator,
    mh_step,
    refinement_select,
    rel_error,
    run_chain,
)
from .nn import Network, TrainConfig, TrainingSet, forward, gradient, loss, swish, train
from .pde import ForwardProblem, Grid, NoiseSpec, Observation, generate_data, observe, source_term
from .surrogate import (
    CompositeModel,
    LocalBall,
    LowFidelityModel,
    build_low_fidelity,
    predict,
    refine,
)

__version__ = "0.1.0"
