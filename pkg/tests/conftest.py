"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
import scipy.linalg as sla
import scipy.stats as st

from hierlm import (
    Dataset,
    DropoutHazard,
    FitOptions,
    FitResult,
    ModelSpec,
    Residual,
    SimulationParams,
    VarianceParams,
    apply_dropout,
    build_design,
    fit,
    simulate_longitudinal,
)
from hierlm.fitting import Convergence

# Published trial estimates used as a reference generator throughout.
TRIAL_BETA = (54.06, 5.83, 0.80, 5.05)
TRIAL_COV_RE = ((64.93, 0.42), (0.42, 25.95))
TRIAL_RESID_VAR = 21.97

GROWTH_SPEC = ModelSpec(
    response="score",
    fixed=("1", "t", "x", "t:x"),
    random=("1", "t"),
    cluster="child",
)
GROWTH_SPEC_AR1 = ModelSpec(
    response="score",
    fixed=("1", "t", "x", "t:x"),
    random=("1", "t"),
    cluster="child",
    residual=Residual(kind="ar1", occasion="occ"),
)


def dense_loglik(dm, cov_re, resid_var, rho=None):
    """Brute-force oracle: explicit block-diagonal covariance, explicit
    inverse for the GLS coefficients, and the stacked multivariate-normal
    log-density.  Kept independent of the likelihood kernel's code path."""
    blocks = []
    for j in range(dm.J):
        Z = dm.Z[j]
        V = Z @ np.asarray(cov_re, dtype=float) @ Z.T
        if rho is not None:
            occ = dm.occasions[j]
            gaps = np.abs(occ[:, None] - occ[None, :])
            V = V + resid_var * np.asarray(rho, dtype=float) ** gaps
        else:
            V = V + resid_var * np.eye(Z.shape[0])
        blocks.append(V)
    V_full = sla.block_diag(*blocks)
    X = np.concatenate(dm.X)
    y = np.concatenate(dm.y)
    V_inv = np.linalg.inv(V_full)
    A = X.T @ V_inv @ X
    beta = np.linalg.solve(A, X.T @ V_inv @ y)
    return st.multivariate_normal.logpdf(y, mean=X @ beta, cov=V_full), beta


def random_tiny_design(rng, q, ar1):
    """A random well-posed instance with J <= 3 clusters of 1..4 rows each."""
    from hierlm import CollinearityError

    while True:
        J = int(rng.integers(1, 4))
        rows = []
        for j in range(J):
            n_j = int(rng.integers(1, 5))
            t = np.sort(rng.uniform(0, 1, n_j))
            rows.append(
                pd.DataFrame(
                    {
                        "g": f"c{j}",
                        "occ": np.arange(n_j),
                        "t": t,
                        "y": rng.normal(size=n_j),
                    }
                )
            )
        frame = pd.concat(rows, ignore_index=True)
        ds = Dataset.from_frame(frame, cluster="g", occasion="occ")
        fixed = ("1",) if q == 1 else ("1", "t")
        residual = Residual(kind="ar1", occasion="occ") if ar1 else Residual()
        spec = ModelSpec(response="y", fixed=fixed, random=fixed, cluster="g",
                         residual=residual)
        try:
            dm = build_design(ds, spec)
        except CollinearityError:
            continue
        if dm.n > dm.p:  # leave the oracle's GLS a spare row
            return dm, spec


def random_psd(rng, q, scale=1.0):
    A = rng.normal(size=(q, q))
    return scale * (A @ A.T + 0.1 * np.eye(q))


def make_fit(
    coef,
    fixed_labels,
    cov_re,
    resid_var,
    *,
    random_labels=("1",),
    coef_se=None,
    cov_re_se=None,
    resid_var_se=None,
    ar1_corr=None,
    ar1_corr_se=None,
    loglik=-1000.0,
    n=100,
    J=10,
    cluster="cluster",
    response="y",
) -> FitResult:
    """Assemble a FitResult directly from given numbers (no data needed),
    for testing the derived-statistic functions in isolation."""
    coef = np.asarray(coef, dtype=float)
    spec = ModelSpec(
        response=response,
        fixed=tuple(fixed_labels),
        random=tuple(random_labels),
        cluster=cluster,
        residual=Residual() if ar1_corr is None
        else Residual(kind="ar1", occasion="occ"),
    )
    q = len(random_labels)
    variance = VarianceParams(
        cov_re=np.asarray(cov_re, dtype=float),
        resid_var=resid_var,
        ar1_corr=ar1_corr,
    )
    corr = None
    if q >= 2 and variance.cov_re[0, 0] > 0 and variance.cov_re[1, 1] > 0:
        corr = float(
            variance.cov_re[1, 0]
            / np.sqrt(variance.cov_re[0, 0] * variance.cov_re[1, 1])
        )
    return FitResult(
        spec=spec,
        fixed_labels=tuple(fixed_labels),
        random_labels=tuple(random_labels),
        coef=coef,
        coef_se=None if coef_se is None else np.asarray(coef_se, dtype=float),
        coef_cov=np.eye(len(coef)),
        variance=variance,
        cov_re_se=None if cov_re_se is None else np.asarray(cov_re_se, dtype=float),
        resid_var_se=resid_var_se,
        ar1_corr_se=ar1_corr_se,
        intercept_slope_corr=corr,
        intercept_slope_corr_se=None,
        loglik=loglik,
        deviance=-2.0 * loglik,
        convergence=Convergence(True, 10, 1e-8, "ok", 0),
        n=n,
        J=J,
        p=len(coef),
        q=q,
        n_dropped=0,
        boundary=tuple([False] * q),
        se_available=coef_se is not None,
        theta=None,
    )


def simulate_trial(seed, n_clusters=180, dropout=True, beta=TRIAL_BETA,
                   ar1_corr=None):
    params = SimulationParams(
        beta=beta,
        cov_re=TRIAL_COV_RE,
        resid_var=TRIAL_RESID_VAR,
        ar1_corr=ar1_corr,
        n_clusters=n_clusters,
        seed=seed,
    )
    ds = simulate_longitudinal(params)
    if dropout:
        ds = apply_dropout(ds, DropoutHazard(), seed=seed + 100_000)
    return ds


@pytest.fixture(scope="session")
def trial_dataset():
    return simulate_trial(seed=42)


@pytest.fixture(scope="session")
def trial_fit(trial_dataset):
    return fit(trial_dataset, GROWTH_SPEC, FitOptions(seed=1))


@pytest.fixture(scope="session")
def trial_design(trial_dataset):
    return build_design(trial_dataset, GROWTH_SPEC)


@pytest.fixture(scope="session")
def school_dataset():
    """Cross-sectional two-level data shaped like a 65-school study."""
    rng = np.random.default_rng(11)
    sizes = rng.integers(8, 120, size=65)
    rows = []
    for j, n_j in enumerate(sizes):
        u = 0.4 * rng.standard_normal()
        x = rng.standard_normal(n_j)
        y = -0.01 + 0.55 * x + u + 0.75 * rng.standard_normal(n_j)
        rows.append(pd.DataFrame({"school": j + 1, "age11": x, "score": y}))
    frame = pd.concat(rows, ignore_index=True)
    return Dataset.from_frame(frame, cluster="school")


@pytest.fixture(scope="session")
def school_null_fit(school_dataset):
    spec = ModelSpec(response="score", fixed=("1",), random=("1",), cluster="school")
    return fit(school_dataset, spec, FitOptions(seed=2))


@pytest.fixture(scope="session")
def school_slope_fit(school_dataset):
    spec = ModelSpec(
        response="score", fixed=("1", "age11"), random=("1",), cluster="school"
    )
    return fit(school_dataset, spec, FitOptions(seed=3))
