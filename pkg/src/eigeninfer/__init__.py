"""Eigenvector-assisted estimation and generalized posterior inference
for symmetric low-rank signal-plus-noise matrices."""

from .model import (
    GroundTruth,
    ObservedMatrix,
    generate_latent_curve,
    sample_rdpg,
    sample_matrix_completion,
    contaminate,
)
from .spectral import (
    Embedding,
    AlignmentMatrix,
    IndefiniteSpectrumError,
    top_eigen,
    spectral_embed,
    align,
    sse,
)
from .weights import (
    WeightFunction,
    WeightDomainError,
    builtin_weight,
    constant_weight,
    rdpg_weight,
    completion_weight,
    inverse_variance_weight,
    noisy_rdpg_weight,
)
from .estimator import (
    RowContext,
    SandwichCovariance,
    ZEstimate,
    build_row_contexts,
    moment_sum,
    moment_jacobian,
    moment_values,
    moment_outer_mean,
    z_estimate,
    sandwich_covariance,
)
from .criteria import (
    Criterion,
    CriterionUndefined,
    EtelSolution,
    m_criterion,
    gmm_weight_matrix,
    gmm_criterion,
    etel_dual,
    etel_criterion,
    criterion_eval,
)
from .sampler import (
    ChainConfig,
    RowPosterior,
    CredibleSet,
    mh_row,
    run_row_chains,
    run_all_rows,
    posterior_mean,
    posterior_cov,
    chi2_quantile,
    credible_ellipse,
    ellipse_contains,
    entrywise_interval,
)
from .diagnostics import PsrfReport, gelman_rubin, trace_export
from .streams import derive_rng

__version__ = "0.1.0"
