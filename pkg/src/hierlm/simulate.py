"""Synthetic clustered and longitudinal data generators.

The longitudinal generator produces a balanced panel of cluster
trajectories: random intercepts and slopes drawn from a PSD factor of the
random-effect covariance, a time-invariant treatment indicator assigned to
an exact seeded share of clusters, and level-1 residuals that are either
independent or a stationary AR(1) recursion with marginal variance equal to
the residual variance.  Monotone missing-at-random attrition is applied as
a separate step whose hazard depends only on the previous occasion's
observed response.

Every cluster draws from its own seeded substream
(``numpy.random.SeedSequence(seed).spawn``), so generation is reproducible
and could be parallelized per cluster without changing the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import Dataset
from .errors import ConfigError, SpecError

#: Default hazard intercept, calibrated so roughly 71% of clusters complete
#: all occasions under the reference trial generator (see DropoutHazard).
DEFAULT_HAZARD_INTERCEPT = -2.545
DEFAULT_HAZARD_SLOPE = -0.5


@dataclass(frozen=True)
class DropoutHazard:
    """Per-occasion monotone dropout with a MAR logistic hazard.

    The probability of dropping at occasion k (k >= 1; the baseline is
    never dropped) is ``sigmoid(intercept + slope * (y_prev - center) /
    scale)`` where ``y_prev`` is the response observed ``lag`` occasions
    earlier.  Lags below 1 would condition on values not yet observed and
    are rejected.  ``constant`` short-circuits the score dependence with a
    fixed probability.
    """

    intercept: float = DEFAULT_HAZARD_INTERCEPT
    slope: float = DEFAULT_HAZARD_SLOPE
    center: float = 54.0
    scale: float = 10.0
    lag: int = 1
    score_column: str = "score"
    constant: float | None = None

    def __post_init__(self):
        if self.lag < 1:
            raise SpecError(
                "dropout may only depend on previously observed responses "
                "(lag >= 1); anything else violates missing-at-random"
            )
        if self.constant is not None and not 0.0 <= self.constant <= 1.0:
            raise ConfigError("constant dropout probability must be in [0, 1]")

    def drop_probability(self, previous_score: float) -> float:
        if self.constant is not None:
            return self.constant
        x = self.intercept + self.slope * (previous_score - self.center) / self.scale
        return 1.0 / (1.0 + math.exp(-x))

    def to_json_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "slope": self.slope,
            "center": self.center,
            "scale": self.scale,
            "lag": self.lag,
            "score_column": self.score_column,
            "constant": self.constant,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DropoutHazard":
        return cls(**doc)


@dataclass(frozen=True)
class CovariateSpec:
    """Covariate drawn for the clustered generator, at the cluster or the
    observation level."""

    name: str
    level: str = "unit"  # "unit" | "cluster"
    dist: str = "normal"  # "normal" | "bernoulli"
    mean: float = 0.0
    sd: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if self.level not in ("unit", "cluster"):
            raise ConfigError(f"unknown covariate level {self.level!r}")
        if self.dist not in ("normal", "bernoulli"):
            raise ConfigError(f"unknown covariate distribution {self.dist!r}")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.dist == "normal":
            return self.mean + self.sd * rng.standard_normal(size)
        return (rng.random(size) < self.p).astype(float)


@dataclass(frozen=True)
class SimulationParams:
    """Generator parameters for synthetic two-level data.

    For the longitudinal trial generator, ``beta`` has four entries in the
    order (intercept, time, treatment, treatment x time) and ``cov_re`` is
    the 2x2 covariance of the random intercept and time slope.  For the
    clustered generator, ``beta`` aligns with (intercept, *covariates) and
    ``cov_re`` is the 1x1 random-intercept variance; ``cluster_sizes``
    gives a per-cluster size list or one common size.
    """

    beta: tuple[float, ...]
    cov_re: tuple
    resid_var: float
    ar1_corr: float | None = None
    n_clusters: int = 180
    occasions: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    treatment_fraction: float = 0.5
    dropout: DropoutHazard | None = None
    cluster_sizes: object = None
    covariates: tuple[CovariateSpec, ...] = ()
    seed: int = 0

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov_re, dtype=float))
        object.__setattr__(self, "cov_re", cov)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not self.resid_var > 0:
            raise ConfigError("resid_var must be positive")
        if self.ar1_corr is not None and not -1 < self.ar1_corr < 1:
            raise ConfigError("ar1_corr must lie strictly inside (-1, 1)")
        if not 0.0 <= self.treatment_fraction <= 1.0:
            raise ConfigError("treatment_fraction must be in [0, 1]")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be positive")
        occ = tuple(float(t) for t in self.occasions)
        if any(b <= a for a, b in zip(occ, occ[1:])):
            raise ConfigError("occasions must be strictly increasing")
        object.__setattr__(self, "occasions", occ)
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ConfigError("cov_re must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12 * scale:
            raise ConfigError("cov_re must be positive semi-definite")

    def to_json_dict(self, kind: str = "longitudinal") -> dict:
        doc = {
            "kind": kind,
            "beta": list(self.beta),
            "cov_re": np.asarray(self.cov_re).tolist(),
            "resid_var": self.resid_var,
            "ar1_corr": self.ar1_corr,
            "seed": self.seed,
            "n_clusters": self.n_clusters,
        }
        if kind == "longitudinal":
            doc["occasions"] = list(self.occasions)
            doc["treatment_fraction"] = self.treatment_fraction
            doc["dropout"] = None if self.dropout is None else self.dropout.to_json_dict()
        else:
            sizes = self.cluster_sizes
            doc["cluster_sizes"] = (
                sizes if sizes is None or isinstance(sizes, int) else list(sizes)
            )
            doc["covariates"] = [
                {
                    "name": c.name,
                    "level": c.level,
                    "dist": c.dist,
                    "mean": c.mean,
                    "sd": c.sd,
                    "p": c.p,
                }
                for c in self.covariates
            ]
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SimulationParams":
        doc = dict(doc)
        doc.pop("kind", None)
        dropout = doc.get("dropout")
        if dropout is not None:
            doc["dropout"] = DropoutHazard.from_json_dict(dropout)
        covariates = doc.get("covariates")
        if covariates:
            doc["covariates"] = tuple(CovariateSpec(**c) for c in covariates)
        known = {
            "beta",
            "cov_re",
            "resid_var",
            "ar1_corr",
            "n_clusters",
            "occasions",
            "treatment_fraction",
            "dropout",
            "cluster_sizes",
            "covariates",
            "seed",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown simulation parameters: {sorted(unknown)}")
        return cls(**doc)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix via its eigendecomposition (works on the
    boundary where a Cholesky factor does not exist)."""
    w, U = np.linalg.eigh(cov)
    return U * np.sqrt(np.clip(w, 0.0, None))


def _ar1_series(rng: np.random.Generator, k: int, resid_var: float, rho: float | None) -> np.ndarray:
    sd = math.sqrt(resid_var)
    z = rng.standard_normal(k)
    if rho is None or rho == 0.0:
        return sd * z
    e = np.empty(k)
    e[0] = sd * z[0]  # stationary start: marginal variance equals resid_var
    innov = sd * math.sqrt(1.0 - rho * rho)
    for i in range(1, k):
        e[i] = rho * e[i - 1] + innov * z[i]
    return e


def simulate_longitudinal(params: SimulationParams) -> Dataset:
    """Balanced pre-dropout panel from the treatment-by-time growth model.

    Columns: ``child`` (cluster), ``occ`` (0-based occasion index), ``t``
    (time value), ``x`` (treatment indicator, constant within cluster),
    ``score`` (response).  Exactly ``round(J * treatment_fraction)``
    clusters are treated, chosen by a seeded permutation.
    """
    if len(params.beta) != 4:
        raise ConfigError(
            "longitudinal beta must be (intercept, time, treatment, "
            "treatment x time)"
        )
    if params.cov_re.shape != (2, 2):
        raise ConfigError("longitudinal cov_re must be 2x2 (intercept, slope)")
    J = params.n_clusters
    times = np.asarray(params.occasions)
    k = times.size
    factor = _psd_factor(params.cov_re)
    b0, b1, b2, b3 = params.beta

    root = np.random.SeedSequence(params.seed)
    streams = root.spawn(J + 1)
    assign_rng = np.random.default_rng(streams[0])
    n_treated = round(J * params.treatment_fraction)
    treated = np.zeros(J, dtype=bool)
    treated[assign_rng.permutation(J)[:n_treated]] = True

    score = np.empty(J * k)
    for j in range(J):
        rng = np.random.default_rng(streams[j + 1])
        u = factor @ rng.standard_normal(2)
        e = _ar1_series(rng, k, params.resid_var, params.ar1_corr)
        x = 1.0 if treated[j] else 0.0
        score[j * k : (j + 1) * k] = (
            b0 + b1 * times + (b2 + b3 * times) * x + u[0] + u[1] * times + e
        )
    frame = pd.DataFrame(
        {
            "child": np.repeat(np.arange(1, J + 1), k),
            "occ": np.tile(np.arange(k), J),
            "t": np.tile(times, J),
            "x": np.repeat(treated.astype(float), k),
            "score": score,
        }
    )
    return Dataset.from_frame(frame, cluster="child", occasion="occ")


def apply_dropout(ds: Dataset, hazard: DropoutHazard, seed: int = 0) -> Dataset:
    """Delete occasions after a seeded monotone MAR dropout per cluster.

    Once a cluster drops at an occasion, that occasion and every later one
    are removed; the baseline occasion always survives.  The hazard sees
    only responses observed at earlier occasions.
    """
    if ds.occasion_column is None:
        raise SpecError("dropout needs a longitudinal dataset with occasions")
    if hazard.score_column not in ds.frame.columns:
        raise SpecError(f"hazard score column {hazard.score_column!r} not in dataset")

    frame = ds.frame
    cluster_col = ds.cluster_column
    labels = frame[cluster_col].to_numpy()
    boundaries = np.flatnonzero(
        np.concatenate([[True], labels[1:] != labels[:-1]])
    )
    streams = np.random.SeedSequence(seed).spawn(len(boundaries))

    keep = np.ones(len(frame), dtype=bool)
    scores = frame[hazard.score_column].to_numpy()
    for c, start in enumerate(boundaries):
        stop = boundaries[c + 1] if c + 1 < len(boundaries) else len(frame)
        rng = np.random.default_rng(streams[c])
        for i in range(start + 1, stop):
            prev = i - hazard.lag
            if prev < start:
                prev = start
            p = hazard.drop_probability(float(scores[prev]))
            if rng.random() < p:
                keep[i:stop] = False
                break
    out = frame.loc[keep].reset_index(drop=True)
    return Dataset(
        frame=out,
        cluster_column=cluster_col,
        occasion_column=ds.occasion_column,
        n_excluded=ds.n_excluded,
    )


def completeness(ds: Dataset, n_occasions: int) -> float:
    """Share of clusters observed at all ``n_occasions`` occasions."""
    sizes = ds.frame.groupby(ds.cluster_column, sort=False).size()
    return float((sizes == n_occasions).mean())


def simulate_clustered(params: SimulationParams) -> Dataset:
    """Cross-sectional two-level data with a random intercept.

    ``cluster_sizes`` is one common size or a per-cluster list; covariates
    are drawn per :class:`CovariateSpec` at the declared level.  Columns:
    ``cluster``, the covariates, and the response ``y``.
    """
    if params.cov_re.shape != (1, 1):
        raise ConfigError("clustered cov_re must be 1x1 (random intercept)")
    if params.cluster_sizes is None:
        raise ConfigError("cluster_sizes is required for the clustered generator")
    J = params.n_clusters
    if isinstance(params.cluster_sizes, int):
        sizes = [params.cluster_sizes] * J
    else:
        sizes = [int(s) for s in params.cluster_sizes]
        if len(sizes) != J:
            raise ConfigError("cluster_sizes must list one size per cluster")
    if any(s < 1 for s in sizes):
        raise ConfigError("every cluster needs at least one observation")
    if len(params.beta) != 1 + len(params.covariates):
        raise ConfigError(
            "beta must align with (intercept, *covariates) for the "
            "clustered generator"
        )

    sd_u = math.sqrt(float(params.cov_re[0, 0]))
    sd_e = math.sqrt(params.resid_var)
    streams = np.random.SeedSequence(params.seed).spawn(J)
    frames = []
    for j, n_j in enumerate(sizes):
        rng = np.random.default_rng(streams[j])
        u = sd_u * rng.standard_normal()
        columns: dict = {"cluster": np.repeat(j + 1, n_j)}
        linear = np.full(n_j, params.beta[0] + u)
        for c, cov in enumerate(params.covariates):
            values = (
                np.repeat(cov.draw(rng, 1), n_j)
                if cov.level == "cluster"
                else cov.draw(rng, n_j)
            )
            columns[cov.name] = values
            linear = linear + params.beta[1 + c] * values
        columns["y"] = linear + sd_e * rng.standard_normal(n_j)
        frames.append(pd.DataFrame(columns))
    frame = pd.concat(frames, ignore_index=True)
    return Dataset.from_frame(frame, cluster="cluster")
