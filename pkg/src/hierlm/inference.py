"""Hypothesis tests and derived summaries for fitted two-level models.

Wald z-tests for individual terms, likelihood-ratio tests between nested
fits (with the optional halved p-value for a single variance tested on the
boundary of its parameter space), intraclass correlation / variance
partition, level-specific R-squared against a null baseline, population
coverage ranges, and the model-implied variance and correlation structure
of random-slope longitudinal models.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError, HierlmError, SpecError
from .fitting import FitResult
from .params import natural_labels

WALD = "wald"
LRT = "lrt"

#: Numerical slack on the deviance ordering of nested fits.
LRT_SLACK = 1e-6


class UnavailableTestError(HierlmError):
    """The requested test cannot be formed (e.g. no standard error)."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int | None
    p_value: float
    kind: str
    boundary_adjusted: bool = False


@dataclass(frozen=True)
class VarianceDecomposition:
    """Between/within variance summaries; R-squared fields are populated
    only when computed against a declared baseline fit and may be negative
    (flagged), since variance estimates can rise when covariates enter."""

    icc_vpc: float
    total_variance: float
    r2_overall: float | None = None
    r2_between: float | None = None
    r2_within: float | None = None
    negative_r2: bool = False


def wald_z(fit: FitResult, term: str) -> TestResult:
    """Two-sided Wald z-test of one term against zero.

    ``term`` is a fixed-effect label, or one of the variance labels
    (``var(...)``, ``cov(...)``, ``resid_var``, ``ar1_corr``); variance
    z-tests are only approximate, the likelihood-ratio test is preferred.
    """
    estimate, se = _lookup_term(fit, term)
    if se is None or not np.isfinite(se) or se == 0:
        raise UnavailableTestError(
            f"no usable standard error for term {term!r} (boundary or "
            f"unavailable information matrix)"
        )
    z = estimate / se
    return TestResult(
        statistic=float(z),
        df=None,
        p_value=float(2.0 * stats.norm.sf(abs(z))),
        kind=WALD,
    )


def _lookup_term(fit: FitResult, term: str) -> tuple[float, float | None]:
    if term in fit.fixed_labels:
        k = fit.fixed_labels.index(term)
        se = None if fit.coef_se is None else float(fit.coef_se[k])
        return float(fit.coef[k]), se
    ar1 = fit.variance.ar1_corr is not None
    labels = natural_labels(fit.random_labels, ar1)
    if term in labels:
        from .params import natural_vector

        k = labels.index(term)
        values = natural_vector(fit.variance)
        m = fit.q * (fit.q + 1) // 2
        if k < m:
            rows, cols = np.tril_indices(fit.q)
            se = (
                None
                if fit.cov_re_se is None
                else float(fit.cov_re_se[rows[k], cols[k]])
            )
        elif k == m:
            se = fit.resid_var_se
        else:
            se = fit.ar1_corr_se
        return float(values[k]), se
    raise ConfigError(f"unknown term {term!r}; fixed terms are {fit.fixed_labels}")


def lrt(
    full: FitResult,
    nested: FitResult,
    df: int,
    boundary: bool = False,
) -> TestResult:
    """Likelihood-ratio test of a full fit against a nested restriction.

    The statistic is the deviance difference.  With ``boundary`` set (df=1
    only) the chi-square tail is halved, reflecting a variance tested
    against the edge of its parameter space; the unadjusted p-value is
    conservative.
    """
    if full.n != nested.n or full.J != nested.J:
        raise DataError(
            f"fits use different data: n={full.n} vs {nested.n}, "
            f"J={full.J} vs {nested.J}"
        )
    return lrt_from_deviances(nested.deviance, full.deviance, df, boundary)


def lrt_from_deviances(
    deviance_nested: float,
    deviance_full: float,
    df: int,
    boundary: bool = False,
) -> TestResult:
    """Likelihood-ratio test from two deviance statistics directly."""
    if df < 1:
        raise ConfigError("df must be a positive integer")
    if boundary and df != 1:
        raise ConfigError("the halved boundary p-value is defined for df=1 only")
    statistic = float(deviance_nested - deviance_full)
    if statistic < -LRT_SLACK:
        raise SpecError(
            f"full model fits worse than its restriction (L = {statistic:.3g}); "
            f"models may not be nested or a fit did not converge"
        )
    statistic = max(statistic, 0.0)
    p = float(stats.chi2.sf(statistic, df))
    if boundary:
        p /= 2.0
    return TestResult(
        statistic=statistic, df=df, p_value=p, kind=LRT, boundary_adjusted=boundary
    )


def icc_random_intercept(fit: FitResult) -> VarianceDecomposition:
    """Intraclass correlation of a random-intercept fit.

    Equals the proportion of response variance lying between clusters
    (the variance partition coefficient).
    """
    if fit.q != 1:
        raise SpecError(
            "the constant ICC is defined for random-intercept models only; "
            "use icc_at_times for random-slope fits"
        )
    var_u = float(fit.variance.cov_re[0, 0])
    var_e = fit.variance.resid_var
    total = var_u + var_e
    return VarianceDecomposition(icc_vpc=var_u / total, total_variance=total)


def _slope_components(fit: FitResult) -> tuple[float, float, float, float]:
    if fit.q != 2:
        raise SpecError(
            "time-dependent variance formulas need a random intercept plus "
            "one random slope"
        )
    cov = fit.variance.cov_re
    return float(cov[0, 0]), float(cov[1, 0]), float(cov[1, 1]), fit.variance.resid_var


def marginal_variance(
    fit: FitResult,
    t: float,
    include_resid: bool = True,
    observed_range: tuple[float, float] | None = None,
) -> float:
    """Model-implied response variance at time t for a random-slope fit:
    intercept variance + 2 t covariance + t^2 slope variance, plus the
    occasion-specific residual variance unless ``include_resid`` is False.

    Passing ``observed_range`` warns (but still computes) when t lies
    outside the times the model was fitted on.
    """
    v0, c01, v1, ve = _slope_components(fit)
    if observed_range is not None and not observed_range[0] <= t <= observed_range[1]:
        warnings.warn(
            f"time {t} lies outside the observed range {observed_range}; "
            f"the implied variance is an extrapolation",
            stacklevel=2,
        )
    value = v0 + 2.0 * c01 * t + v1 * t * t
    return value + ve if include_resid else value


def icc_at_times(fit: FitResult, t1: float, t2: float) -> float:
    """Model-implied correlation between two observations of one cluster
    taken at times t1 and t2; symmetric, and equal to the constant ICC
    when the slope components vanish."""
    v0, c01, v1, _ = _slope_components(fit)
    num = v0 + c01 * (t1 + t2) + v1 * t1 * t2
    den = math.sqrt(marginal_variance(fit, t1) * marginal_variance(fit, t2))
    return num / den


def implied_correlation_matrix(fit: FitResult, times) -> np.ndarray:
    """Model-implied correlation matrix over a vector of measurement times."""
    times = np.asarray(times, dtype=float)
    k = times.size
    out = np.eye(k)
    for a in range(k):
        for b in range(a):
            out[a, b] = out[b, a] = icc_at_times(fit, times[a], times[b])
    return out


def r_squared(fit: FitResult, baseline: FitResult) -> VarianceDecomposition:
    """Proportional variance reduction relative to a null baseline fit.

    Overall uses the total variance, between the cluster-intercept
    variance, within the residual variance.  Values may be negative and
    are reported unclamped with ``negative_r2`` set.
    """
    if fit.q != 1 or baseline.q != 1:
        raise SpecError("r_squared is defined for random-intercept fits")
    if baseline.p != 1:
        raise SpecError("the baseline must be the null (variance-components) fit")
    if fit.spec.response != baseline.spec.response or fit.spec.cluster != baseline.spec.cluster:
        raise DataError("fits model different responses or clusterings")
    if fit.n != baseline.n or fit.J != baseline.J:
        raise DataError(
            f"fits use different data rows: n={fit.n} vs {baseline.n}"
        )
    vu_b = float(baseline.variance.cov_re[0, 0])
    ve_b = baseline.variance.resid_var
    vu_f = float(fit.variance.cov_re[0, 0])
    ve_f = fit.variance.resid_var
    total_b = vu_b + ve_b
    total_f = vu_f + ve_f
    overall = (total_b - total_f) / total_b
    between = (vu_b - vu_f) / vu_b
    within = (ve_b - ve_f) / ve_b
    return VarianceDecomposition(
        icc_vpc=vu_f / total_f,
        total_variance=total_f,
        r2_overall=overall,
        r2_between=between,
        r2_within=within,
        negative_r2=bool(min(overall, between, within) < 0),
    )


def coverage_range(
    fit: FitResult, which: str, level: float = 0.95
) -> tuple[float, float]:
    """Range covering the middle ``level`` of the population.

    ``which`` selects the component: ``"intercept"`` centers the fixed
    intercept on the intercept random-effect SD, ``"slope"`` centers the
    fixed coefficient of the random-slope term on the slope SD, and
    ``"residual"`` is the symmetric range of the level-1 residual.
    """
    if not 0 < level < 1:
        raise ConfigError("level must be in (0, 1)")
    z = stats.norm.ppf(0.5 + level / 2.0)
    if which == "residual":
        half = z * math.sqrt(fit.variance.resid_var)
        return (-half, half)
    if which == "intercept":
        k = 0
    elif which == "slope":
        if fit.q < 2:
            raise SpecError("no random slope in this fit")
        k = 1
    else:
        raise ConfigError(f"unknown component {which!r}")
    term = fit.random_labels[k]
    if term not in fit.fixed_labels:
        raise SpecError(f"random term {term!r} has no fixed counterpart")
    center = float(fit.coef[fit.fixed_labels.index(term)])
    sd = math.sqrt(float(fit.variance.cov_re[k, k]))
    return (center - z * sd, center + z * sd)
