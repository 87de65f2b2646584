"""MEM-V: validity test for linear errors-in-variables regression models.

The test asks whether the residual variance of a linear model fitted under a
presumed covariate measurement-error covariance is explainable by a presumed
response measurement-error variance, or whether the model misses covariates.
"""

from memv.core import (
    DataError,
    Dataset,
    ErrorModel,
    ThetaEstimate,
    als_estimate,
    r_squared,
    sample_moments,
)
from memv.inference import (
    DEFAULT_Z_ALPHA,
    DegenerateResidualError,
    SandwichEstimate,
    TestResult,
    eval_estimating_functions,
    memv_test,
    normal_cdf,
    sandwich,
    suggest_sigma0,
)
from memv.sweep import (
    DEFAULT_GRID,
    KnownBlock,
    SweepCurve,
    SweepPoint,
    TruthSpec,
    asymptotic_numerator,
    build_presumed_S,
    sample_covariance,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_GRID",
    "DEFAULT_Z_ALPHA",
    "DataError",
    "Dataset",
    "DegenerateResidualError",
    "ErrorModel",
    "KnownBlock",
    "SandwichEstimate",
    "SweepCurve",
    "SweepPoint",
    "TestResult",
    "ThetaEstimate",
    "TruthSpec",
    "als_estimate",
    "asymptotic_numerator",
    "build_presumed_S",
    "eval_estimating_functions",
    "memv_test",
    "normal_cdf",
    "r_squared",
    "sample_covariance",
    "sample_moments",
    "sandwich",
    "suggest_sigma0",
    "sweep",
]
