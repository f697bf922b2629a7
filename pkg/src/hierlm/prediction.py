"""Post-estimation prediction: empirical-Bayes cluster effects and friends.

The predicted effect of cluster j is the best linear unbiased predictor
``u_j = C Z_j' V_j^-1 (y_j - X_j beta)`` with C the fitted random-effect
covariance; its conditional covariance is the plug-in comparative form
``C - C Z_j' V_j^-1 Z_j C`` (no correction for the estimation of the fixed
effects).  Predictions shrink each cluster's raw mean residual toward zero,
more strongly for smaller clusters, and the conditional SD never exceeds
the marginal random-effect SD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .design import DesignMatrices, term_columns
from .errors import ConfigError, DataError, SpecError
from .fitting import FitResult
from .likelihood import cluster_covariance

INTERCEPT = "1"


@dataclass(frozen=True)
class EbPrediction:
    """Empirical-Bayes prediction for one cluster."""

    cluster: object
    u_hat: np.ndarray
    cond_sd: np.ndarray
    rank: int
    n_j: int
    low: np.ndarray
    high: np.ndarray


@dataclass(frozen=True)
class ResidualSet:
    """Per-observation residual decomposition: raw = level2 + level1."""

    cluster: np.ndarray
    raw: np.ndarray
    level2: np.ndarray
    level1: np.ndarray


def _cluster_effects(fit: FitResult, dm: DesignMatrices):
    """Per-cluster (u_hat, conditional covariance) pairs in dm order."""
    vp = fit.variance
    cov = vp.cov_re
    effects = []
    for j in range(dm.J):
        occ = None if dm.occasions is None else dm.occasions[j]
        V = cluster_covariance(vp, dm.Z[j], occ)
        resid = dm.y[j] - dm.X[j] @ fit.coef
        solved = np.linalg.solve(V, np.column_stack([resid, dm.Z[j]]))
        u = cov @ (dm.Z[j].T @ solved[:, 0])
        cond = cov - cov @ (dm.Z[j].T @ solved[:, 1:]) @ cov
        effects.append((u, (cond + cond.T) / 2.0))
    return effects


def eb_predict(fit: FitResult, dm: DesignMatrices, level: float = 0.95) -> list[EbPrediction]:
    """Empirical-Bayes predictions for every cluster, in dataset order.

    Ranks run 1..J ascending by the first component (ties broken by
    cluster label); intervals are ``u_hat +/- z * cond_sd`` at ``level``.
    """
    z = stats.norm.ppf(0.5 + level / 2.0)
    effects = _cluster_effects(fit, dm)
    order = sorted(
        range(dm.J), key=lambda j: (effects[j][0][0], str(dm.clusters[j]))
    )
    ranks = np.empty(dm.J, dtype=int)
    ranks[order] = np.arange(1, dm.J + 1)
    out = []
    for j in range(dm.J):
        u, cond = effects[j]
        sd = np.sqrt(np.maximum(np.diag(cond), 0.0))
        out.append(
            EbPrediction(
                cluster=dm.clusters[j],
                u_hat=u,
                cond_sd=sd,
                rank=int(ranks[j]),
                n_j=len(dm.y[j]),
                low=u - z * sd,
                high=u + z * sd,
            )
        )
    return out


def shrinkage_factor(fit: FitResult, n_j: int) -> float:
    """Weight a cluster of size n_j places on its own mean residual in a
    random-intercept model: var_u / (var_u + var_e / n_j).  Strictly
    increasing in n_j and approaching 1 as the cluster grows."""
    if fit.q != 1:
        raise SpecError(
            "the scalar shrinkage factor is defined for random-intercept "
            "models; with random slopes shrinkage is a matrix"
        )
    if n_j < 1:
        raise ConfigError("n_j must be a positive integer")
    var_u = float(fit.variance.cov_re[0, 0])
    var_e = fit.variance.resid_var
    if var_u == 0.0:
        return 0.0
    return var_u / (var_u + var_e / n_j)


def residuals(fit: FitResult, dm: DesignMatrices) -> ResidualSet:
    """Raw, level-2 fitted, and level-1 residual parts per observation."""
    effects = _cluster_effects(fit, dm)
    raw, level2, cluster = [], [], []
    for j in range(dm.J):
        r = dm.y[j] - dm.X[j] @ fit.coef
        raw.append(r)
        level2.append(dm.Z[j] @ effects[j][0])
        cluster.extend([dm.clusters[j]] * len(r))
    raw = np.concatenate(raw)
    level2 = np.concatenate(level2)
    return ResidualSet(
        cluster=np.asarray(cluster, dtype=object),
        raw=raw,
        level2=level2,
        level1=raw - level2,
    )


def caterpillar(fit: FitResult, dm: DesignMatrices, level: float = 0.95) -> pd.DataFrame:
    """Ranked league table of predicted cluster effects (first component).

    Rows ascend by predicted effect; ``separable_from_zero`` marks clusters
    whose interval excludes zero.
    """
    preds = eb_predict(fit, dm, level)
    rows = [
        {
            "rank": p.rank,
            "cluster": p.cluster,
            "u_hat": float(p.u_hat[0]),
            "cond_sd": float(p.cond_sd[0]),
            "low": float(p.low[0]),
            "high": float(p.high[0]),
            "n_j": p.n_j,
            "separable_from_zero": bool(p.low[0] > 0 or p.high[0] < 0),
        }
        for p in preds
    ]
    frame = pd.DataFrame(rows).sort_values("rank").reset_index(drop=True)
    return frame


def cluster_lines(fit: FitResult, dm: DesignMatrices, grid) -> pd.DataFrame:
    """Predicted cluster-specific lines over a grid of covariate values.

    ``grid`` maps within-cluster covariate names to value arrays (a dict or
    DataFrame); covariates the model uses but the grid omits must be
    constant within every cluster and are filled per cluster from the data.
    Each output row holds the population-average prediction (fixed part
    only) and the cluster-specific prediction including that cluster's
    predicted effects; occasion-specific residuals are never included.
    """
    grid = pd.DataFrame(grid)
    if len(grid) == 0:
        cols = ["cluster", *grid.columns, "pred_population", "pred_cluster"]
        return pd.DataFrame(columns=cols)

    needed = set()
    for term in fit.fixed_labels:
        needed.update(term_columns(term))
    for col in needed - set(grid.columns):
        if col not in dm.cluster_constants:
            raise ConfigError(
                f"grid must supply values for {col!r}; it varies within "
                f"clusters"
            )

    effects = _cluster_effects(fit, dm)
    chunks = []
    for j in range(dm.J):
        frame = grid.copy()
        for col in needed - set(grid.columns):
            frame[col] = dm.cluster_constants[col][j]
        X = np.column_stack([_term_values(t, frame) for t in fit.fixed_labels])
        Z = np.column_stack([_term_values(t, frame) for t in fit.random_labels])
        pop = X @ fit.coef
        chunk = grid.copy()
        chunk.insert(0, "cluster", dm.clusters[j])
        chunk["pred_population"] = pop
        chunk["pred_cluster"] = pop + Z @ effects[j][0]
        chunks.append(chunk)
    return pd.concat(chunks, ignore_index=True)


def _term_values(term: str, frame: pd.DataFrame) -> np.ndarray:
    if term == INTERCEPT:
        return np.ones(len(frame))
    values = np.ones(len(frame))
    for col in term_columns(term):
        values = values * frame[col].to_numpy(dtype=float)
    return values


def empirical_residual_correlation(
    fit: FitResult,
    dm: DesignMatrices,
    times=None,
    min_clusters: int = 3,
) -> pd.DataFrame:
    """Sample correlations of raw residuals arranged by occasion.

    Residuals are ``y - X beta`` (total residuals, including the
    occasion-specific part).  Correlations are pairwise complete over the
    clusters observed at both occasions; pairs seen in fewer than
    ``min_clusters`` clusters are left as NaN.
    """
    if dm.occasions is None:
        raise DataError("empirical residual correlations need an occasion column")
    observed = sorted({int(o) for occ in dm.occasions for o in occ})
    labels = observed if times is None else [int(t) for t in times]
    unknown = [t for t in labels if t not in observed]
    if unknown:
        raise ConfigError(f"occasions {unknown} never observed")

    index = {t: k for k, t in enumerate(labels)}
    table = np.full((dm.J, len(labels)), np.nan)
    for j in range(dm.J):
        resid = dm.y[j] - dm.X[j] @ fit.coef
        for o, r in zip(dm.occasions[j], resid):
            if int(o) in index:
                table[j, index[int(o)]] = r

    k = len(labels)
    out = np.eye(k)
    for a in range(k):
        for b in range(a):
            both = np.isfinite(table[:, a]) & np.isfinite(table[:, b])
            if both.sum() < min_clusters:
                out[a, b] = out[b, a] = np.nan
                continue
            corr = np.corrcoef(table[both, a], table[both, b])[0, 1]
            out[a, b] = out[b, a] = corr
    return pd.DataFrame(out, index=labels, columns=labels)
