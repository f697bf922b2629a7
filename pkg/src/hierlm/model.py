"""Scikit-learn style estimator facade over the fitting engine.

``LinearMixedModel`` follows the estimator conventions (constructor stores
parameters verbatim, ``fit`` validates and sets trailing-underscore
attributes, ``get_params``/``set_params`` work with ``sklearn.base.clone``),
so the model can sit inside tooling that expects that surface while the
underlying engine stays a plain library.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Dataset
from .design import ModelSpec, Residual, build_design, describe
from .fitting import FitOptions, FitResult, fit_design
from .prediction import _cluster_effects, _term_values, caterpillar, eb_predict


def _parse_residual(residual: str, occasion: str | None) -> Residual:
    if residual == "iid":
        return Residual()
    if residual == "ar1":
        return Residual(kind="ar1", occasion=occasion)
    if residual.startswith("ar1:"):
        return Residual(kind="ar1", occasion=residual.split(":", 1)[1])
    raise ValueError(f"unknown residual structure {residual!r}")


class LinearMixedModel(BaseEstimator):
    """Two-level linear mixed model estimator.

    Parameters
    ----------
    response : str
        Response column name.
    fixed : sequence of str
        Fixed-effect terms ("1", column names, or "a:b" products).
    random : sequence of str
        Random-effect terms over the cluster; each must also be fixed.
    cluster : str
        Cluster identifier column.
    residual : str
        "iid", "ar1" (with ``occasion``), or "ar1:<column>".
    occasion : str or None
        Occasion index column for longitudinal data.
    max_iter, grad_tol, fd_step, seed, compute_se, threads
        Optimizer options, see :class:`hierlm.fitting.FitOptions`.

    Examples
    --------
    >>> model = LinearMixedModel("score", fixed=("1", "t"), random=("1", "t"),
    ...                          cluster="child", occasion="occ")
    >>> model.fit(frame)                                   # doctest: +SKIP
    >>> model.predict(frame, include_cluster_effects=True) # doctest: +SKIP
    """

    def __init__(
        self,
        response: str = "y",
        fixed=("1",),
        random=("1",),
        cluster: str = "cluster",
        residual: str = "iid",
        occasion: str | None = None,
        max_iter: int = 500,
        grad_tol: float = 1e-6,
        fd_step: float = 1e-5,
        seed: int = 0,
        compute_se: bool = True,
        threads: int = 1,
    ):
        self.response = response
        self.fixed = fixed
        self.random = random
        self.cluster = cluster
        self.residual = residual
        self.occasion = occasion
        self.max_iter = max_iter
        self.grad_tol = grad_tol
        self.fd_step = fd_step
        self.seed = seed
        self.compute_se = compute_se
        self.threads = threads

    def _spec(self) -> ModelSpec:
        return ModelSpec(
            response=self.response,
            fixed=tuple(self.fixed),
            random=tuple(self.random),
            cluster=self.cluster,
            residual=_parse_residual(self.residual, self.occasion),
        )

    def _options(self) -> FitOptions:
        return FitOptions(
            max_iter=self.max_iter,
            grad_tol=self.grad_tol,
            fd_step=self.fd_step,
            seed=self.seed,
            compute_se=self.compute_se,
            threads=self.threads,
        )

    def _as_dataset(self, data) -> Dataset:
        if isinstance(data, Dataset):
            return data
        if isinstance(data, pd.DataFrame):
            return Dataset.from_frame(data, cluster=self.cluster, occasion=self.occasion)
        raise TypeError("data must be a hierlm Dataset or a pandas DataFrame")

    def fit(self, X, y=None) -> "LinearMixedModel":
        """Fit by maximum likelihood.  ``X`` is a long-format table (the
        response lives inside it; ``y`` is accepted for API compatibility
        and must be None)."""
        if y is not None:
            raise ValueError("pass the response as a column of the table")
        spec = self._spec()
        ds = self._as_dataset(X)
        dm = build_design(ds, spec)
        result = fit_design(dm, spec, self._options())
        self.result_: FitResult = result
        self.design_ = dm
        self.coef_ = result.coef
        self.coef_se_ = result.coef_se
        self.cov_re_ = result.variance.cov_re
        self.resid_var_ = result.variance.resid_var
        self.ar1_corr_ = result.variance.ar1_corr
        self.loglik_ = result.loglik
        self.deviance_ = result.deviance
        self.n_features_in_ = dm.p
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "result_"):
            raise NotFittedError(
                "this LinearMixedModel is not fitted yet; call fit first"
            )

    def predict(self, X=None, include_cluster_effects: bool = True) -> np.ndarray:
        """Predicted response for each row of a long-format table.

        The fixed part is always included; predicted cluster effects are
        added for clusters seen during fitting (unknown clusters get the
        population line).  Occasion-specific residuals are never included.
        """
        self._check_fitted()
        result, dm = self.result_, self.design_
        if X is None:
            Xmat = np.concatenate(dm.X)
            Zmat = np.concatenate(dm.Z)
            labels = np.concatenate(
                [np.repeat(np.array([c], dtype=object), len(dm.y[j]))
                 for j, c in enumerate(dm.clusters)]
            )
        else:
            frame = X.frame if isinstance(X, Dataset) else pd.DataFrame(X)
            Xmat = np.column_stack(
                [_term_values(t, frame) for t in result.fixed_labels]
            )
            Zmat = np.column_stack(
                [_term_values(t, frame) for t in result.random_labels]
            )
            labels = frame[self.cluster].to_numpy()
        pred = Xmat @ result.coef
        if include_cluster_effects:
            effects = {
                c: u for c, (u, _) in zip(dm.clusters, _cluster_effects(result, dm))
            }
            for i, label in enumerate(labels):
                u = effects.get(label)
                if u is not None:
                    pred[i] += float(Zmat[i] @ u)
        return pred

    def random_effects(self, level: float = 0.95) -> pd.DataFrame:
        """Ranked empirical-Bayes cluster effects (caterpillar table)."""
        self._check_fitted()
        return caterpillar(self.result_, self.design_, level)

    def score(self, X=None, y=None) -> float:
        """Log-likelihood of the fitted model (higher is better)."""
        self._check_fitted()
        return self.loglik_

    def formula(self) -> str:
        return describe(self._spec())

    def summary(self) -> str:
        self._check_fitted()
        return self.result_.summary()
