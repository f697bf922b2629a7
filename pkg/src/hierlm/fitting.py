"""Maximum-likelihood fitting of two-level models.

The profiled log-likelihood is maximized over the unconstrained
parameterization of the variance components (``params.pack``/``unpack``)
with a quasi-Newton (BFGS) search driven by central finite-difference
gradients.  On a line-search failure or an optimum that misses the gradient
tolerance, the search restarts once from a seeded perturbation of the start.

Standard errors come from the inverse of the negative numeric Hessian of
the full (fixed effects, variance parameters) log-likelihood at the
optimum, mapped to the natural scale by the delta method.  When that
Hessian is not positive definite (typically a variance on the boundary),
the fit is returned with standard errors flagged unavailable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .data import Dataset
from .design import AR1, DesignMatrices, ModelSpec, build_design
from .errors import CollinearityError, ConditioningError, ConvergenceError
from .likelihood import log_likelihood, log_likelihood_at
from .numdiff import central_gradient, central_hessian, central_jacobian
from .params import (
    VarianceParams,
    diag_positions,
    natural_vector,
    pack,
    theta_length,
    unpack,
)

#: Log-Cholesky diagonal below which a variance is reported as exactly 0.
BOUNDARY_LOG_DIAG = -12.0


@dataclass(frozen=True)
class FitOptions:
    """Optimizer controls.

    ``fd_step`` is the relative central-difference step on the
    unconstrained scale; ``seed`` drives the restart perturbation;
    ``compute_se`` can be switched off to skip the Hessian pass in
    simulation loops; ``threads`` sizes the likelihood worker pool
    (results are identical for any value).
    """

    max_iter: int = 500
    grad_tol: float = 1e-6
    fd_step: float = 1e-5
    seed: int = 0
    compute_se: bool = True
    threads: int = 1


@dataclass(frozen=True)
class Convergence:
    converged: bool
    iterations: int
    grad_norm: float
    status: str
    restarts: int


@dataclass(frozen=True)
class FitResult:
    """Maximum-likelihood estimates of a two-level model.

    ``variance`` holds the reported (boundary-floored) covariance
    parameters; ``theta`` is the raw optimizer solution on the
    unconstrained scale.  ``coef_cov`` is the GLS covariance of the fixed
    effects at the fitted variance parameters, while ``coef_se`` (like all
    reported standard errors) comes from the full numeric Hessian and is
    None when ``se_available`` is False.
    """

    spec: ModelSpec
    fixed_labels: tuple[str, ...]
    random_labels: tuple[str, ...]
    coef: np.ndarray
    coef_se: np.ndarray | None
    coef_cov: np.ndarray
    variance: VarianceParams
    cov_re_se: np.ndarray | None
    resid_var_se: float | None
    ar1_corr_se: float | None
    intercept_slope_corr: float | None
    intercept_slope_corr_se: float | None
    loglik: float
    deviance: float
    convergence: Convergence
    n: int
    J: int
    p: int
    q: int
    n_dropped: int
    boundary: tuple[bool, ...]
    se_available: bool
    theta: np.ndarray = field(repr=False, default=None)

    def coef_table(self) -> list[dict]:
        rows = []
        for k, label in enumerate(self.fixed_labels):
            se = None if self.coef_se is None else float(self.coef_se[k])
            rows.append({"term": label, "estimate": float(self.coef[k]), "se": se})
        return rows

    def to_json_dict(self) -> dict:
        from .design import describe

        vp = self.variance
        icc = None
        if self.q == 1:
            icc = float(vp.cov_re[0, 0] / (vp.cov_re[0, 0] + vp.resid_var))
        return {
            "model": self.spec.to_json_dict(),
            "formula": describe(self.spec),
            "counts": {
                "n": self.n,
                "J": self.J,
                "p": self.p,
                "q": self.q,
                "n_dropped": self.n_dropped,
            },
            "fixed": self.coef_table(),
            "random": {
                "cluster": self.spec.cluster,
                "terms": list(self.random_labels),
                "cov_re": vp.cov_re.tolist(),
                "cov_re_se": None if self.cov_re_se is None else self.cov_re_se.tolist(),
                "resid_var": vp.resid_var,
                "resid_var_se": self.resid_var_se,
                "ar1_corr": vp.ar1_corr,
                "ar1_corr_se": self.ar1_corr_se,
                "intercept_slope_corr": self.intercept_slope_corr,
                "intercept_slope_corr_se": self.intercept_slope_corr_se,
                "boundary": list(self.boundary),
            },
            "icc": icc,
            "loglik": self.loglik,
            "deviance": self.deviance,
            "convergence": {
                "converged": self.convergence.converged,
                "iterations": self.convergence.iterations,
                "grad_norm": self.convergence.grad_norm,
                "status": self.convergence.status,
                "restarts": self.convergence.restarts,
            },
            "se_available": self.se_available,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FitResult":
        spec = ModelSpec.from_json_dict(doc["model"])
        rnd = doc["random"]
        counts = doc["counts"]
        conv = doc["convergence"]
        coef_se = [row["se"] for row in doc["fixed"]]
        have_se = doc.get("se_available", all(se is not None for se in coef_se))
        variance = VarianceParams(
            cov_re=np.array(rnd["cov_re"], dtype=float),
            resid_var=rnd["resid_var"],
            ar1_corr=rnd.get("ar1_corr"),
        )
        p = counts["p"]
        return cls(
            spec=spec,
            fixed_labels=tuple(row["term"] for row in doc["fixed"]),
            random_labels=tuple(rnd["terms"]),
            coef=np.array([row["estimate"] for row in doc["fixed"]], dtype=float),
            coef_se=np.array(coef_se, dtype=float) if have_se else None,
            coef_cov=np.full((p, p), np.nan),
            variance=variance,
            cov_re_se=None
            if rnd.get("cov_re_se") is None
            else np.array(rnd["cov_re_se"], dtype=float),
            resid_var_se=rnd.get("resid_var_se"),
            ar1_corr_se=rnd.get("ar1_corr_se"),
            intercept_slope_corr=rnd.get("intercept_slope_corr"),
            intercept_slope_corr_se=rnd.get("intercept_slope_corr_se"),
            loglik=doc["loglik"],
            deviance=doc["deviance"],
            convergence=Convergence(
                converged=conv["converged"],
                iterations=conv["iterations"],
                grad_norm=conv["grad_norm"],
                status=conv["status"],
                restarts=conv["restarts"],
            ),
            n=counts["n"],
            J=counts["J"],
            p=p,
            q=counts["q"],
            n_dropped=counts.get("n_dropped", 0),
            boundary=tuple(rnd.get("boundary", [False] * counts["q"])),
            se_available=have_se,
            theta=None,
        )

    def summary(self) -> str:
        """Paper-style table: estimates and standard errors to 3 decimals."""
        from .design import describe

        def fmt(x):
            return "" if x is None else f"{x:.3f}"

        lines = [describe(self.spec)]
        lines.append(f"n = {self.n}, clusters = {self.J}, dropped rows = {self.n_dropped}")
        lines.append("")
        lines.append(f"{'term':<24}{'estimate':>12}{'se':>12}")
        for row in self.coef_table():
            lines.append(f"{row['term']:<24}{fmt(row['estimate']):>12}{fmt(row['se']):>12}")
        vp = self.variance
        for k, label in enumerate(self.random_labels):
            se = None if self.cov_re_se is None else float(self.cov_re_se[k, k])
            name = f"var({label})"
            lines.append(f"{name:<24}{fmt(float(vp.cov_re[k, k])):>12}{fmt(se):>12}")
        for a in range(self.q):
            for b_ in range(a):
                se = None if self.cov_re_se is None else float(self.cov_re_se[a, b_])
                name = f"cov({self.random_labels[a]},{self.random_labels[b_]})"
                lines.append(
                    f"{name:<24}{fmt(float(vp.cov_re[a, b_])):>12}{fmt(se):>12}"
                )
        if self.intercept_slope_corr is not None:
            lines.append(
                f"{'corr(intercept,slope)':<24}"
                f"{fmt(self.intercept_slope_corr):>12}"
                f"{fmt(self.intercept_slope_corr_se):>12}"
            )
        lines.append(f"{'resid_var':<24}{fmt(vp.resid_var):>12}{fmt(self.resid_var_se):>12}")
        if vp.ar1_corr is not None:
            lines.append(
                f"{'ar1_corr':<24}{fmt(vp.ar1_corr):>12}{fmt(self.ar1_corr_se):>12}"
            )
        lines.append("")
        lines.append(f"loglik = {self.loglik:.3f}, deviance = {self.deviance:.3f}")
        if any(self.boundary):
            flagged = [l for l, b in zip(self.random_labels, self.boundary) if b]
            lines.append(f"boundary: variance of {flagged} estimated as 0")
        if not self.se_available:
            lines.append("standard errors unavailable (information matrix not "
                         "positive definite; boundary suspected)")
        return "\n".join(lines)


def default_start(ds: Dataset, spec: ModelSpec) -> np.ndarray:
    """Starting point on the unconstrained scale (see ``_start_theta``)."""
    return _start_theta(build_design(ds, spec), spec.residual.kind == AR1)


def _start_theta(dm: DesignMatrices, ar1: bool) -> np.ndarray:
    """OLS-based start: half the OLS residual variance goes to the residual,
    half is spread across the random-effect variances scaled by their
    covariate variances; covariances and the AR(1) correlation start at 0."""
    X = np.concatenate(dm.X)
    y = np.concatenate(dm.y)
    Z = np.concatenate(dm.Z)
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(y) - dm.p, 1)
    s2 = max(float(resid @ resid) / dof, 1e-10)

    q = dm.q
    theta = np.zeros(theta_length(q, ar1))
    dpos = diag_positions(q)
    for k in range(q):
        col = Z[:, k]
        scale = 1.0 if np.all(col == col[0]) else max(float(np.var(col)), 1e-8)
        theta[dpos[k]] = 0.5 * math.log((s2 / 2.0) / (q * scale))
    theta[q * (q + 1) // 2] = 0.5 * math.log(s2 / 2.0)
    return theta


def fit(
    ds: Dataset,
    spec: ModelSpec,
    opts: FitOptions = FitOptions(),
    start: np.ndarray | None = None,
) -> FitResult:
    """Fit a two-level model by maximum likelihood.

    ``start`` warm-starts the variance search on the unconstrained scale
    (defaults to the OLS-based start).

    Raises
    ------
    ConvergenceError
        If, after one perturbed restart, no run reaches the gradient
        tolerance within ``opts.max_iter`` iterations.  The error carries a
        per-attempt trace.
    """
    dm = build_design(ds, spec)
    return fit_design(dm, spec, opts, start)


def fit_design(
    dm: DesignMatrices,
    spec: ModelSpec,
    opts: FitOptions = FitOptions(),
    start: np.ndarray | None = None,
) -> FitResult:
    """Fit from pre-built design matrices (same contract as :func:`fit`)."""
    ar1 = spec.residual.kind == AR1
    q = dm.q

    def objective(theta: np.ndarray) -> float:
        try:
            return -log_likelihood(unpack(theta, q, ar1), dm, opts.threads).loglik
        except (np.linalg.LinAlgError, ConditioningError, CollinearityError):
            # extreme line-search points: let the search back off
            return np.inf

    def gradient(theta: np.ndarray) -> np.ndarray:
        return central_gradient(objective, theta, opts.fd_step)

    theta0 = _start_theta(dm, ar1) if start is None else np.asarray(start, dtype=float)
    rng = np.random.default_rng(opts.seed)

    attempts = []
    theta_start = theta0
    for restart in range(2):
        res = optimize.minimize(
            objective,
            theta_start,
            jac=gradient,
            method="BFGS",
            options={"gtol": opts.grad_tol, "maxiter": opts.max_iter},
        )
        theta, fval, gnorm = _polish(
            objective, gradient, res.x, float(res.fun), opts, grad=res.jac
        )
        attempts.append(
            {
                "restart": restart,
                "status": res.message,
                "iterations": int(res.nit),
                "loglik": -fval,
                "grad_norm": gnorm,
                "theta": theta,
            }
        )
        if gnorm <= opts.grad_tol and np.isfinite(fval):
            break
        theta_start = theta0 + 0.1 * rng.standard_normal(theta0.size)

    best = min(
        attempts,
        key=lambda a: (a["grad_norm"] > opts.grad_tol, -a["loglik"]),
    )
    if best["grad_norm"] > opts.grad_tol or not np.isfinite(best["loglik"]):
        raise ConvergenceError(
            f"optimizer did not reach gradient tolerance {opts.grad_tol} "
            f"within {opts.max_iter} iterations (best gradient norm "
            f"{best['grad_norm']:.3e})",
            trace=attempts,
        )

    theta_hat = best["theta"]
    vp_reported, boundary = _floor_boundary(theta_hat, q, ar1)
    ll = log_likelihood(vp_reported, dm, opts.threads)

    convergence = Convergence(
        converged=True,
        iterations=best["iterations"],
        grad_norm=best["grad_norm"],
        status=str(best["status"]),
        restarts=best["restart"],
    )

    se = _StdErrors(None, None, None, None, None, False)
    if opts.compute_se:
        se = _standard_errors(dm, ll.beta_hat, theta_hat, q, ar1, opts)

    corr, corr_se = _intercept_slope_corr(vp_reported, se)

    return FitResult(
        spec=spec,
        fixed_labels=dm.fixed_labels,
        random_labels=dm.random_labels,
        coef=ll.beta_hat,
        coef_se=se.coef_se,
        coef_cov=ll.beta_cov,
        variance=vp_reported,
        cov_re_se=se.cov_re_se,
        resid_var_se=se.resid_var_se,
        ar1_corr_se=se.ar1_corr_se,
        intercept_slope_corr=corr,
        intercept_slope_corr_se=corr_se,
        loglik=ll.loglik,
        deviance=ll.deviance,
        convergence=convergence,
        n=dm.n,
        J=dm.J,
        p=dm.p,
        q=dm.q,
        n_dropped=dm.n_dropped,
        boundary=boundary,
        se_available=se.available,
        theta=theta_hat,
    )


def _polish(
    objective,
    gradient,
    theta: np.ndarray,
    fval: float,
    opts: FitOptions,
    grad: np.ndarray | None = None,
) -> tuple[np.ndarray, float, float]:
    """Newton refinement of a quasi-Newton solution.

    BFGS can stall just above the gradient tolerance where the finite
    difference noise floor flattens its line searches; a couple of damped
    Newton steps on the (small) variance-parameter space push the gradient
    the rest of the way down.  Steps that fail to decrease the objective
    are rejected, so this never degrades the BFGS solution.
    """
    if grad is None:
        grad = gradient(theta)
    for _ in range(3):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= opts.grad_tol or not np.isfinite(fval):
            break
        H = central_hessian(objective, theta, rel_step=math.sqrt(opts.fd_step))
        try:
            step = np.linalg.solve((H + H.T) / 2.0, grad)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(H, grad, rcond=None)
        if not np.all(np.isfinite(step)):
            break
        accepted = False
        for damp in (1.0, 0.5, 0.25, 0.125):
            candidate = theta - damp * step
            f_new = objective(candidate)
            if np.isfinite(f_new) and f_new <= fval + 1e-9 * max(1.0, abs(fval)):
                g_new = gradient(candidate)
                if np.max(np.abs(g_new)) < gnorm:
                    theta, fval, grad = candidate, f_new, g_new
                    accepted = True
                break
        if not accepted:
            break
    return theta, fval, float(np.max(np.abs(grad)))


def _floor_boundary(
    theta: np.ndarray, q: int, ar1: bool
) -> tuple[VarianceParams, tuple[bool, ...]]:
    """Report variances whose log-Cholesky diagonal collapsed as exactly 0."""
    vp = unpack(theta, q, ar1)
    dpos = diag_positions(q)
    flags = tuple(bool(theta[dpos[k]] < BOUNDARY_LOG_DIAG) for k in range(q))
    if not any(flags):
        return vp, flags
    cov = vp.cov_re.copy()
    for k, flagged in enumerate(flags):
        if flagged:
            cov[k, :] = 0.0
            cov[:, k] = 0.0
    return VarianceParams(cov, vp.resid_var, vp.ar1_corr), flags


@dataclass(frozen=True)
class _StdErrors:
    coef_se: np.ndarray | None
    cov_re_se: np.ndarray | None
    resid_var_se: float | None
    ar1_corr_se: float | None
    natural_cov: np.ndarray | None
    available: bool


def _fd_scales(dm: DesignMatrices, q: int, ar1: bool) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference step magnitudes for (beta, theta) derivatives.

    Log- and atanh-transformed entries are translation coordinates under a
    response rescaling, so they take unit scale; the remaining entries
    carry the units of the response.  This keeps the numeric information
    matrix (hence every reported SE) equivariant when y is rescaled.
    """
    y = np.concatenate(dm.y)
    X = np.concatenate(dm.X)
    sd_y = max(float(np.std(y)), 1e-12)
    rms = np.sqrt(np.mean(X * X, axis=0))
    beta_scale = sd_y / np.maximum(rms, 1e-12)
    rows, cols = np.tril_indices(q)
    theta_scale = np.where(rows == cols, 1.0, sd_y)
    tail = [1.0, 1.0] if ar1 else [1.0]
    return beta_scale, np.concatenate([theta_scale, tail])


def _standard_errors(
    dm: DesignMatrices,
    beta: np.ndarray,
    theta: np.ndarray,
    q: int,
    ar1: bool,
    opts: FitOptions,
) -> _StdErrors:
    p = len(beta)
    x0 = np.concatenate([beta, theta])
    beta_scale, theta_scale = _fd_scales(dm, q, ar1)
    scale = np.concatenate([beta_scale, theta_scale])

    def joint_loglik(x: np.ndarray) -> float:
        try:
            return log_likelihood_at(unpack(x[p:], q, ar1), dm, x[:p], opts.threads)
        except (np.linalg.LinAlgError, ConditioningError):
            return -np.inf

    unavailable = _StdErrors(None, None, None, None, None, False)
    H = central_hessian(joint_loglik, x0, rel_step=math.sqrt(opts.fd_step), scale=scale)
    if not np.all(np.isfinite(H)):
        return unavailable
    info = -(H + H.T) / 2.0
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return unavailable
    identity = np.eye(info.shape[0])
    half = np.linalg.solve(chol, identity)
    cov = half.T @ half

    coef_var = np.diag(cov)[:p]
    if np.any(coef_var < 0):
        return unavailable
    coef_se = np.sqrt(coef_var)

    # Delta method: theta-scale covariance to the natural variance scale.
    cov_theta = cov[p:, p:]

    def nat(th: np.ndarray) -> np.ndarray:
        return natural_vector(unpack(th, q, ar1))

    jac = central_jacobian(nat, theta, opts.fd_step, scale=theta_scale)
    natural_cov = jac @ cov_theta @ jac.T
    nat_var = np.diag(natural_cov).copy()
    if np.any(nat_var < -1e-10):
        return unavailable
    nat_se = np.sqrt(np.maximum(nat_var, 0.0))

    m = q * (q + 1) // 2
    rows, cols = np.tril_indices(q)
    cov_re_se = np.zeros((q, q))
    cov_re_se[rows, cols] = nat_se[:m]
    cov_re_se[cols, rows] = nat_se[:m]
    resid_var_se = float(nat_se[m])
    ar1_corr_se = float(nat_se[m + 1]) if ar1 else None
    return _StdErrors(coef_se, cov_re_se, resid_var_se, ar1_corr_se, natural_cov, True)


def _intercept_slope_corr(
    vp: VarianceParams, se: _StdErrors
) -> tuple[float | None, float | None]:
    """Correlation between the first two random effects, with a delta-method
    standard error over (var0, cov01, var1)."""
    if vp.q < 2:
        return None, None
    v0, c01, v1 = vp.cov_re[0, 0], vp.cov_re[1, 0], vp.cov_re[1, 1]
    if v0 <= 0 or v1 <= 0:
        return None, None
    corr = float(c01 / math.sqrt(v0 * v1))
    if se.natural_cov is None:
        return corr, None
    # Natural order for q>=2 starts (var0, cov01, var1, ...).
    block = se.natural_cov[:3, :3]
    grad = np.array(
        [-corr / (2.0 * v0), 1.0 / math.sqrt(v0 * v1), -corr / (2.0 * v1)]
    )
    var = float(grad @ block @ grad)
    return corr, (math.sqrt(var) if var >= 0 else None)
