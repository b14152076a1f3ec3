"""Matrix-variate regression for spatio-temporal data.

A library and CLI for fitting Y = B X + E where the columns of the p x r
response matrix enumerate location/time pairs and the errors follow a
matrix-normal distribution with an unstructured row covariance and a
separable spatial x temporal (AR(1)) column covariance.
"""

from .diagnostics import (
    cell_residuals,
    column_distances,
    diagnose,
    qq_points,
    row_distances,
    standardize_residuals,
)
from .errors import DataError, NumericalError
from .estimation import (
    ScoreState,
    bic_value,
    count_parameters,
    fit,
    log_likelihood,
    solve_score_nu,
    solve_score_phi,
    solve_score_rho,
    update_b_block,
    update_b_dense,
    update_b_diagonal,
    update_b_sparse,
    update_sigma,
    update_sigma_s2,
)
from .model import (
    CoefficientStructure,
    CovarianceParams,
    CovarianceSpec,
    Dataset,
    DiagnosticsReport,
    FitOptions,
    FittedModel,
    SpaceTimeLayout,
    augment_covariates,
)
from .simulation import (
    SimulationScenario,
    StudyResult,
    compare_joint_vs_separate,
    fit_separate_rows,
    run_study,
    sample_grid_locations,
    sample_matrix_normal,
    simulate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "CoefficientStructure",
    "CovarianceParams",
    "CovarianceSpec",
    "DataError",
    "Dataset",
    "DiagnosticsReport",
    "FitOptions",
    "FittedModel",
    "NumericalError",
    "ScoreState",
    "SimulationScenario",
    "SpaceTimeLayout",
    "StudyResult",
    "augment_covariates",
    "bic_value",
    "cell_residuals",
    "column_distances",
    "compare_joint_vs_separate",
    "count_parameters",
    "diagnose",
    "fit",
    "fit_separate_rows",
    "log_likelihood",
    "qq_points",
    "row_distances",
    "run_study",
    "sample_grid_locations",
    "sample_matrix_normal",
    "simulate_dataset",
    "solve_score_nu",
    "solve_score_phi",
    "solve_score_rho",
    "standardize_residuals",
    "update_b_block",
    "update_b_dense",
    "update_b_diagonal",
    "update_b_sparse",
    "update_sigma",
    "update_sigma_s2",
]
