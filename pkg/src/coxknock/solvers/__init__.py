"""L1-penalized path solvers for Cox, Gaussian and multinomial likelihoods."""
from .path import (
    Cox,
    CVResult,
    DegenerateResponseError,
    Family,
    Fit,
    FitOptions,
    Gaussian,
    Multinomial,
    NumericalFailure,
    PathResult,
    coordinate_descent_fit,
    cross_validate,
    cv_select_penalty,
    entry_lambdas,
    kkt_residuals,
    lambda_max,
    lasso_path,
    negative_log_likelihood,
    score,
)

__all__ = [
    "Cox",
    "CVResult",
    "DegenerateResponseError",
    "Family",
    "Fit",
    "FitOptions",
    "Gaussian",
    "Multinomial",
    "NumericalFailure",
    "PathResult",
    "coordinate_descent_fit",
    "cross_validate",
    "cv_select_penalty",
    "entry_lambdas",
    "kkt_residuals",
    "lambda_max",
    "lasso_path",
    "negative_log_likelihood",
    "score",
]
