"""Zero imputation as implicit ridge regularization: theory, estimators, experiments."""

from zeroimp.impute import (
    IterativeConditionalImputer,
    OptimalConstantImputer,
    ZeroImputer,
    fit_iterative_conditional,
    fit_optimal_constant,
    impute_zero,
)
from zeroimp.masking import (
    MaskModel,
    MaskStats,
    calibrate_self_masking,
    exact_mask_stats,
    mc_mask_stats,
    sample_mask,
)
from zeroimp.model import (
    CovarianceSpec,
    Dataset,
    LinearProblem,
    build_lowrank_problem,
    build_spiked_problem,
    population_risk,
    sample_dataset,
)
from zeroimp.regress import (
    FitResult,
    PatternFit,
    SgdConfig,
    fit_averaged_sgd,
    fit_pattern_by_pattern,
    fit_ridge,
    fit_ridge_loo,
    predict,
)
from zeroimp.theory import (
    TheoryReport,
    bound_bundle,
    example_bound,
    gaussian_mis_bayes_risk,
    imputation_bias,
    imputed_risk,
    optimal_imputed_predictor,
    ridge_bias,
)

__version__ = "0.1.0"
