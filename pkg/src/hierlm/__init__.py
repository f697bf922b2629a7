"""Two-level linear mixed models for clustered and longitudinal data.

Maximum-likelihood estimation of variance-components, random-intercept and
random-slope models with independent or AR(1) level-1 residuals;
empirical-Bayes (shrinkage) prediction of cluster effects; likelihood-ratio
and Wald inference; intraclass correlation and implied correlation
structure; and seeded simulators for clustered data and longitudinal trials
with monotone missing-at-random attrition.
"""

from .data import (
    Dataset,
    GroupIndex,
    cluster_mean,
    encode_categorical,
    group_index,
    interaction,
    load_long_csv,
    standardize,
)
from .design import (
    DesignMatrices,
    ModelSpec,
    Residual,
    build_design,
    describe,
)
from .errors import (
    BoundaryError,
    CollinearityError,
    ConditioningError,
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateScaleError,
    HierlmError,
    ParseError,
    SchemaError,
    SpecError,
)
from .fitting import FitOptions, FitResult, default_start, fit
from .inference import (
    TestResult,
    UnavailableTestError,
    VarianceDecomposition,
    coverage_range,
    icc_at_times,
    icc_random_intercept,
    implied_correlation_matrix,
    lrt,
    lrt_from_deviances,
    marginal_variance,
    r_squared,
    wald_z,
)
from .likelihood import (
    LikelihoodValue,
    cluster_covariance,
    log_likelihood,
    profile_beta,
)
from .model import LinearMixedModel
from .params import VarianceParams, pack, unpack
from .prediction import (
    EbPrediction,
    ResidualSet,
    caterpillar,
    cluster_lines,
    eb_predict,
    empirical_residual_correlation,
    residuals,
    shrinkage_factor,
)
from .simulate import (
    CovariateSpec,
    DropoutHazard,
    SimulationParams,
    apply_dropout,
    completeness,
    simulate_clustered,
    simulate_longitudinal,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryError",
    "CollinearityError",
    "ConditioningError",
    "ConfigError",
    "ConvergenceError",
    "CovariateSpec",
    "DataError",
    "Dataset",
    "DegenerateScaleError",
    "DesignMatrices",
    "DropoutHazard",
    "EbPrediction",
    "FitOptions",
    "FitResult",
    "GroupIndex",
    "HierlmError",
    "LikelihoodValue",
    "LinearMixedModel",
    "ModelSpec",
    "ParseError",
    "Residual",
    "ResidualSet",
    "SchemaError",
    "SimulationParams",
    "SpecError",
    "TestResult",
    "UnavailableTestError",
    "VarianceDecomposition",
    "VarianceParams",
    "apply_dropout",
    "build_design",
    "caterpillar",
    "cluster_covariance",
    "cluster_lines",
    "cluster_mean",
    "completeness",
    "coverage_range",
    "default_start",
    "describe",
    "eb_predict",
    "empirical_residual_correlation",
    "encode_categorical",
    "fit",
    "group_index",
    "icc_at_times",
    "icc_random_intercept",
    "implied_correlation_matrix",
    "interaction",
    "load_long_csv",
    "log_likelihood",
    "lrt",
    "lrt_from_deviances",
    "marginal_variance",
    "pack",
    "profile_beta",
    "r_squared",
    "residuals",
    "shrinkage_factor",
    "simulate_clustered",
    "simulate_longitudinal",
    "standardize",
    "unpack",
    "wald_z",
]
