"""Bayesian inference for SDEs driven by fractional Brownian motion.

Euler-scheme data augmentation, analytic-gradient Hybrid Monte Carlo and
exact conjugate-Gaussian computations for the fractional mean-reverting
("fou") and square-root ("fcir") models, with the Hurst index treated as
unknown.
"""

from .augment import (
    AugmentedTarget,
    CompleteData,
    ParamState,
    PriorSpec,
    grad_potential,
    noise_increments,
    potential,
    prior_by_name,
    refine,
)
from .conjugate import (
    FcirK0Draws,
    GridPosterior,
    RegressionStats,
    conditional_sample,
    fcir_k0_posterior,
    fou_exact_marginal,
    fou_grid_posterior,
    fou_k0_grid,
    marginal_theta_logdensity,
    regression_stats,
)
from .errors import (
    ConfigError,
    DataError,
    DomainExitError,
    FracSdeError,
    NumericAccuracyWarning,
    NumericError,
    SamplerError,
)
from .models import (
    FcirParams,
    FouParams,
    SdeModel,
    euler_simulate,
    fcir_model,
    fou_acf,
    fou_exact_simulate,
    fou_model,
    geometric_euler_failure_demo,
    simulate_fcir_path,
)
from .samplers import (
    ChainOutput,
    HmcConfig,
    chain_diagnostics,
    hmc_step,
    leapfrog,
    run_gibbs,
    run_hmc_full,
)
from .toeplitz import (
    CholeskyLadder,
    FgnCovariance,
    durbin_levinson,
    fgn_autocovariance,
    fgn_simulate,
    gaussian_loglik,
    toeplitz_quadratic_form,
)

__version__ = "0.1.0"
