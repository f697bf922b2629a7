"""Variance parameters and their unconstrained reparameterization.

The random-effect covariance is optimized through its Cholesky factor with a
log-transformed diagonal, the residual variance through its log standard
deviation, and the AR(1) correlation through an inverse hyperbolic tangent.
Every real vector therefore maps to a valid parameter set, and packing and
unpacking are mutually inverse wherever the covariance is positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryError, SpecError

#: Symmetry / PSD slack for validating a user-supplied covariance.
PSD_TOL = 1e-12


@dataclass(frozen=True)
class VarianceParams:
    """Covariance parameters of a two-level model.

    Parameters
    ----------
    cov_re : ndarray (q, q)
        Symmetric positive semi-definite covariance of the cluster random
        effects.
    resid_var : float
        Level-1 residual variance, strictly positive.
    ar1_corr : float or None
        Lag-one correlation of the level-1 residuals in (-1, 1); None for
        independent residuals.
    """

    cov_re: np.ndarray
    resid_var: float
    ar1_corr: float | None = None

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.cov_re, dtype=float))
        object.__setattr__(self, "cov_re", cov)
        object.__setattr__(self, "resid_var", float(self.resid_var))
        if self.ar1_corr is not None:
            object.__setattr__(self, "ar1_corr", float(self.ar1_corr))

    @property
    def q(self) -> int:
        return self.cov_re.shape[0]

    def validate(self) -> None:
        cov = self.cov_re
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise SpecError("cov_re must be square")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > PSD_TOL * scale:
            raise SpecError("cov_re must be symmetric")
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() < -PSD_TOL * scale:
            raise SpecError("cov_re must be positive semi-definite")
        if not self.resid_var > 0:
            raise SpecError("resid_var must be positive")
        if self.ar1_corr is not None and not -1 < self.ar1_corr < 1:
            raise SpecError("ar1_corr must lie strictly inside (-1, 1)")


def theta_length(q: int, ar1: bool) -> int:
    """Length of the unconstrained vector for q random effects."""
    return q * (q + 1) // 2 + 1 + (1 if ar1 else 0)


def _tril_indices(q: int) -> tuple[np.ndarray, np.ndarray]:
    # Row-major lower triangle: (0,0), (1,0), (1,1), (2,0), ...
    return np.tril_indices(q)


def diag_positions(q: int) -> np.ndarray:
    """Positions of the log-diagonal entries within the theta vector."""
    rows, cols = _tril_indices(q)
    return np.flatnonzero(rows == cols)


def pack(vp: VarianceParams) -> np.ndarray:
    """Map valid VarianceParams with positive-definite cov_re to theta."""
    vp.validate()
    try:
        L = np.linalg.cholesky(vp.cov_re)
    except np.linalg.LinAlgError as exc:
        raise BoundaryError(
            "cov_re is singular; the unconstrained parameterization needs a "
            "positive-definite covariance"
        ) from exc
    rows, cols = _tril_indices(vp.q)
    chol = L[rows, cols].copy()
    diag = rows == cols
    chol[diag] = np.log(chol[diag])
    tail = [0.5 * np.log(vp.resid_var)]
    if vp.ar1_corr is not None:
        tail.append(np.arctanh(vp.ar1_corr))
    return np.concatenate([chol, tail])


def unpack(theta: np.ndarray, q: int, ar1: bool) -> VarianceParams:
    """Map any real theta vector to valid VarianceParams."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (theta_length(q, ar1),):
        raise SpecError(
            f"theta must have length {theta_length(q, ar1)} for q={q}, ar1={ar1}"
        )
    m = q * (q + 1) // 2
    rows, cols = _tril_indices(q)
    entries = theta[:m].copy()
    diag = rows == cols
    # Overflow at absurd theta yields inf entries; downstream factorizations
    # reject them, so the optimizer's line search simply backs off.
    with np.errstate(over="ignore", invalid="ignore"):
        entries[diag] = np.exp(entries[diag])
        L = np.zeros((q, q))
        L[rows, cols] = entries
        cov_re = L @ L.T
        cov_re = (cov_re + cov_re.T) / 2.0
        resid_var = float(np.exp(2.0 * theta[m]))
    ar1_corr = float(np.tanh(theta[m + 1])) if ar1 else None
    return VarianceParams(cov_re=cov_re, resid_var=resid_var, ar1_corr=ar1_corr)


def natural_vector(vp: VarianceParams) -> np.ndarray:
    """Natural-scale parameter vector: lower triangle of cov_re (row-major),
    residual variance, and the AR(1) correlation when present."""
    rows, cols = _tril_indices(vp.q)
    out = [vp.cov_re[rows, cols], [vp.resid_var]]
    if vp.ar1_corr is not None:
        out.append([vp.ar1_corr])
    return np.concatenate([np.asarray(part, dtype=float) for part in out])


def natural_labels(random_labels: tuple[str, ...], ar1: bool) -> tuple[str, ...]:
    """Names aligned with :func:`natural_vector`."""
    q = len(random_labels)
    rows, cols = _tril_indices(q)
    labels = []
    for r, c in zip(rows, cols):
        if r == c:
            labels.append(f"var({random_labels[r]})")
        else:
            labels.append(f"cov({random_labels[r]},{random_labels[c]})")
    labels.append("resid_var")
    if ar1:
        labels.append("ar1_corr")
    return tuple(labels)
