"""Distribution-adaptive local polynomial regression.

The outrigger estimator pairs the usual kernel window at x0 with a shell
("outrigger") window just outside it.  Residuals from the shell feed a
score-matching spline estimate of the conditional error score, and a
cross-fitted estimating equation turns that score into a variance reduction
at x0 without touching the bias of the standard local polynomial fit.
"""

from .dgps import (
    DGP_NAMES,
    DgpSpec,
    PopulationQuantities,
    get_dgp,
    oracle_score,
    population_quantities,
    regression_f,
    sample,
    theoretical_ratio_curve,
)
from .errors import (
    EmptyAnnulus,
    EstimationError,
    InsufficientLocalData,
    NonConvergence,
    SingularGram,
    SingularJacobian,
    TooFewResiduals,
)
from .estimators import (
    FitResult,
    FoldArtifacts,
    OutriggerConfig,
    VariancePieces,
    build_fold_artifacts,
    compute_c_hat,
    compute_mu_hat,
    confidence_interval,
    estimate_variance_pieces,
    estimating_equation,
    fisher_scoring,
    fit_oracle_ll,
    fit_outrigger,
    fit_plugin,
    partition_folds,
)
from .kernels import (
    KernelMoments,
    KernelSpec,
    OutriggerKernel,
    PolyBasisSpec,
    eval_kernel,
    kernel_moments,
    lambda0,
    outrigger_eval,
    poly_basis,
    r2_kernel,
    scaled_eval,
)
from .localpoly import Dataset, LpFit, fit_lp, predict_lp_many
from .score import (
    ScoreFitConfig,
    ScoreModel,
    cv_select_eta,
    dump_score_curve,
    eval_score,
    eval_score_deriv,
    fit_conditional_score,
    fit_score_spline,
    gaussian_fallback,
)
from .simulate import ExperimentConfig, ExperimentResult, bandwidth_sweep, lambda_sweep, run_experiment

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
