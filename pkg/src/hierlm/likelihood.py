"""Marginal Gaussian log-likelihood of a two-level model.

The marginal covariance of cluster j is ``V_j = Z_j C Z_j' + s2 * R_j`` with
C the random-effect covariance, s2 the residual variance, and R_j either the
identity or the AR(1) correlation ``rho**|occ_a - occ_b|`` over integer
occasion gaps.  Fixed effects are profiled out by generalized least squares,
so the likelihood is a function of the variance parameters alone.

Every per-cluster term is computed through a Cholesky factorization of V_j
(dimension n_j); the stacked system is never formed or inverted.  Clusters
sharing a covariance pattern reuse one factorization (see
``DesignMatrices.pattern_groups``).  Per-group contributions are summed in a
fixed order regardless of worker count, so results are bit-reproducible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .design import DesignMatrices, PatternGroup
from .errors import CollinearityError, ConditioningError
from .params import VarianceParams

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LikelihoodValue:
    """Profiled log-likelihood with its GLS fixed-effect solution."""

    loglik: float
    deviance: float
    beta_hat: np.ndarray
    beta_cov: np.ndarray


def cluster_covariance(
    vp: VarianceParams,
    Z_j: np.ndarray,
    occasions_j: np.ndarray | None = None,
) -> np.ndarray:
    """Marginal covariance of one cluster's observations.

    Under AR(1) residuals the correlation between two observations decays
    as ``ar1_corr ** gap`` where gap is the absolute difference of their
    integer occasion indices; with ar1_corr None this reduces to
    independent residuals.
    """
    Z_j = np.atleast_2d(np.asarray(Z_j, dtype=float))
    V = Z_j @ vp.cov_re @ Z_j.T
    if vp.ar1_corr is not None:
        if occasions_j is None:
            raise ConditioningError("AR(1) residuals need occasion indices")
        occ = np.asarray(occasions_j)
        gaps = np.abs(occ[:, None] - occ[None, :])
        V = V + vp.resid_var * vp.ar1_corr ** gaps
    else:
        V = V + vp.resid_var * np.eye(Z_j.shape[0])
    return (V + V.T) / 2.0


@dataclass(frozen=True)
class _SuffStats:
    """Accumulated GLS pieces: A = sum X'V^-1X, b = sum X'V^-1y,
    yy = sum y'V^-1y, plus log|V| and n totals."""

    A: np.ndarray
    b: np.ndarray
    yy: float
    logdet: float
    n: int


def _group_stats(vp: VarianceParams, g: PatternGroup, p: int) -> _SuffStats:
    V = cluster_covariance(vp, g.Z, g.occ)
    try:
        L = np.linalg.cholesky(V)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            f"covariance for cluster {g.first_cluster!r} is not positive "
            f"definite at these variance parameters",
            cluster=g.first_cluster,
        ) from exc
    m, nj = g.y.shape
    # Whiten all member blocks against the shared factor in one solve.
    W = solve_triangular(L, g.rhs, lower=True, check_finite=False)
    Xw = W[:, : m * p].reshape(nj, m, p)
    yw = W[:, m * p :]
    return _SuffStats(
        A=np.einsum("nmp,nmq->pq", Xw, Xw),
        b=np.einsum("nmp,nm->p", Xw, yw),
        yy=float(np.einsum("nm,nm->", yw, yw)),
        logdet=2.0 * m * float(np.log(np.diag(L)).sum()),
        n=m * nj,
    )


def _accumulate(vp: VarianceParams, dm: DesignMatrices, threads: int = 1) -> _SuffStats:
    groups = dm.pattern_groups
    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda g: _group_stats(vp, g, dm.p), groups))
    else:
        parts = [_group_stats(vp, g, dm.p) for g in groups]
    A = np.zeros((dm.p, dm.p))
    b = np.zeros(dm.p)
    yy = 0.0
    logdet = 0.0
    n = 0
    for part in parts:  # fixed order: results do not depend on thread count
        A += part.A
        b += part.b
        yy += part.yy
        logdet += part.logdet
        n += part.n
    return _SuffStats(A=A, b=b, yy=yy, logdet=logdet, n=n)


def _solve_gls(stats: _SuffStats) -> tuple[np.ndarray, np.ndarray]:
    try:
        factor = cho_factor((stats.A + stats.A.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise CollinearityError(
            "normal-equations matrix is singular; fixed terms are collinear "
            "under these weights"
        ) from exc
    beta = cho_solve(factor, stats.b)
    beta_cov = cho_solve(factor, np.eye(len(stats.b)))
    return beta, (beta_cov + beta_cov.T) / 2.0


def profile_beta(
    vp: VarianceParams, dm: DesignMatrices, threads: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """GLS fixed-effect estimates and their covariance at fixed variance
    parameters: beta = (sum X'V^-1X)^-1 sum X'V^-1y."""
    return _solve_gls(_accumulate(vp, dm, threads))


def log_likelihood(
    vp: VarianceParams, dm: DesignMatrices, threads: int = 1
) -> LikelihoodValue:
    """Profiled marginal log-likelihood.

    Returns the log-likelihood at the GLS coefficients, i.e.
    ``-0.5 * sum_j [n_j log 2pi + log|V_j| + r_j' V_j^-1 r_j]`` with
    residuals taken at the profiled beta.
    """
    stats = _accumulate(vp, dm, threads)
    beta, beta_cov = _solve_gls(stats)
    quad = stats.yy - float(stats.b @ beta)
    loglik = -0.5 * (stats.n * LOG_2PI + stats.logdet + quad)
    return LikelihoodValue(
        loglik=loglik, deviance=-2.0 * loglik, beta_hat=beta, beta_cov=beta_cov
    )


def log_likelihood_at(
    vp: VarianceParams, dm: DesignMatrices, beta: np.ndarray, threads: int = 1
) -> float:
    """Marginal log-likelihood at explicitly supplied fixed effects."""
    stats = _accumulate(vp, dm, threads)
    beta = np.asarray(beta, dtype=float)
    quad = stats.yy - 2.0 * float(stats.b @ beta) + float(beta @ stats.A @ beta)
    return -0.5 * (stats.n * LOG_2PI + stats.logdet + quad)
