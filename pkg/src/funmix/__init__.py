"""Multilevel functional mixed-membership models.

Simulation, MCMC posterior inference and posterior summarization for
multilevel functional data such as multichannel EEG log-spectral densities.
"""

from .basis import BasisSystem, build_basis, evaluate, rw1_penalty
from .model import (
    FunctionalDataset,
    ModelDims,
    ModelState,
    conditional_mean,
    loglik_conditional,
    loglik_marginal,
    mixed_covariance,
    permute_features,
)
from .posterior import (
    ICTable,
    PosteriorSummary,
    align_draws,
    elbow_select,
    extract_eigenfunctions,
    information_criteria,
    reconstruct_covariance,
    summarize,
)
from .priors import (
    PriorConfig,
    ShrinkageParams,
    mgps_log_prior,
    repulsive_log_prior,
    rw1_log_prior,
    tilde_tau,
    z_layer_log_prior,
)
from .sampler import (
    ChainOutput,
    SamplerConfig,
    run_chain,
    update_coefficients,
    update_hyper_a,
    update_memberships,
    update_scores,
    update_variances,
)
from .simulate import GroundTruth, align_labels, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "BasisSystem", "build_basis", "evaluate", "rw1_penalty",
    "FunctionalDataset", "ModelDims", "ModelState", "conditional_mean",
    "loglik_conditional", "loglik_marginal", "mixed_covariance", "permute_features",
    "PriorConfig", "ShrinkageParams", "mgps_log_prior", "repulsive_log_prior",
    "rw1_log_prior", "tilde_tau", "z_layer_log_prior",
    "ChainOutput", "SamplerConfig", "run_chain", "update_coefficients",
    "update_hyper_a", "update_memberships", "update_scores", "update_variances",
    "GroundTruth", "align_labels", "simulate_dataset",
    "ICTable", "PosteriorSummary", "align_draws", "elbow_select",
    "extract_eigenfunctions", "information_criteria", "reconstruct_covariance",
    "summarize",
]
