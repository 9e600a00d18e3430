"""Softmax-gated Gaussian mixture-of-experts toolkit.

Submodules
----------
measure
    Model parameterization, conditional density, translation action,
    sampling, likelihood.
estimator
    Maximum-likelihood fitting via EM with a projected-ascent gating step.
voronoi
    Nearest-atom cell assignment and the translation-infimum loss
    functions for the exact-fitted and over-fitted regimes.
polysys
    The coupled moment system of polynomial equations behind the
    over-fitted rates: construction, evaluation, non-trivial-solution
    search.
divergence
    Numerical squared-Hellinger and total-variation distances between
    conditional densities, averaged over the covariate law.
experiments
    Monte Carlo harness estimating log-log convergence slopes.
cli
    Command-line entry point (``gatemix``).
"""

from .measure import (
    Dataset,
    ExpertComponent,
    MixingMeasure,
    ThetaBox,
    conditional_density,
    log_density,
    log_density_grid,
    log_likelihood,
    log_likelihood_grad,
    sample,
    softmax_gate,
    translate,
)
from .estimator import FitConfig, FitResult, e_step, fit_mle, m_step_experts, m_step_gating
from .voronoi import (
    LossResult,
    TranslationSolverConfig,
    VoronoiAssignment,
    exact_loss,
    exact_loss_at,
    min_unsolvable_order,
    overfit_loss,
    overfit_loss_at,
    voronoi_cells,
)
from .polysys import (
    CandidateSolution,
    MultiIndex,
    PolySystem,
    SearchConfig,
    SearchResult,
    build_system,
    evaluate_system,
    index_set,
    is_nontrivial,
    search_nontrivial,
)
from .divergence import DivergenceEstimate, QuadratureSpec, hellinger_sq, total_variation
from .experiments import (
    ExperimentConfig,
    RateResult,
    fit_slope,
    parameter_group_errors,
    run_experiment,
)

__version__ = "0.1.0"
