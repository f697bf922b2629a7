"""Likelihood kernel against brute-force oracles."""

import numpy as np
import pandas as pd
import pytest
import scipy.linalg as sla

from hierlm import (
    Dataset,
    ModelSpec,
    VarianceParams,
    build_design,
    cluster_covariance,
    log_likelihood,
    profile_beta,
)
from hierlm.likelihood import LOG_2PI, log_likelihood_at

from conftest import dense_loglik, random_psd, random_tiny_design


class TestClusterCovariance:
    def test_compound_symmetry(self):
        vp = VarianceParams(cov_re=np.array([[0.169]]), resid_var=0.848)
        V = cluster_covariance(vp, np.ones((2, 1)))
        np.testing.assert_allclose(
            V, [[1.017, 0.169], [0.169, 1.017]], atol=1e-12
        )

    def test_ar1_at_zero_equals_iid(self):
        vp_iid = VarianceParams(cov_re=np.array([[0.5]]), resid_var=2.0)
        vp_ar1 = VarianceParams(cov_re=np.array([[0.5]]), resid_var=2.0, ar1_corr=0.0)
        Z = np.ones((3, 1))
        occ = np.array([0, 1, 2])
        np.testing.assert_allclose(
            cluster_covariance(vp_ar1, Z, occ), cluster_covariance(vp_iid, Z)
        )

    def test_ar1_correlation_decay(self):
        # residual-only structure: correlations rho, rho^2 off the diagonal
        vp = VarianceParams(
            cov_re=np.zeros((1, 1)), resid_var=25.18, ar1_corr=0.17
        )
        V = cluster_covariance(vp, np.ones((3, 1)), np.array([1, 2, 3]))
        corr = V / 25.18
        np.testing.assert_allclose(corr[1, 0], 0.17)
        np.testing.assert_allclose(corr[2, 0], 0.0289)


class TestOracleEquivalence:
    def test_random_instances_match_dense_mvn(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            q = int(rng.integers(1, 3))
            ar1 = bool(rng.integers(0, 2))
            dm, _ = random_tiny_design(rng, q=q, ar1=ar1)
            vp = VarianceParams(
                cov_re=random_psd(rng, q),
                resid_var=float(rng.uniform(0.2, 3.0)),
                ar1_corr=float(rng.uniform(-0.8, 0.8)) if ar1 else None,
            )
            mine = log_likelihood(vp, dm)
            oracle, oracle_beta = dense_loglik(
                dm, vp.cov_re, vp.resid_var, vp.ar1_corr
            )
            assert abs(mine.loglik - oracle) <= 1e-8
            np.testing.assert_allclose(mine.beta_hat, oracle_beta, atol=1e-8)
            assert mine.deviance == -2.0 * mine.loglik

    def test_standard_normal_point(self):
        # one observation at zero with unit total variance
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a"], "y": [0.0]}), cluster="g"
        )
        dm = build_design(
            ds, ModelSpec(response="y", fixed=("1",), random=("1",), cluster="g")
        )
        vp = VarianceParams(cov_re=np.zeros((1, 1)), resid_var=1.0)
        value = log_likelihood(vp, dm)
        np.testing.assert_allclose(value.loglik, -0.5 * LOG_2PI)


class TestProfileBeta:
    def test_intercept_only_is_mean(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a"] * 4, "y": [1.0, 2.0, 3.0, 6.0]}), cluster="g"
        )
        dm = build_design(
            ds, ModelSpec(response="y", fixed=("1",), random=("1",), cluster="g")
        )
        vp = VarianceParams(cov_re=np.zeros((1, 1)), resid_var=2.0)
        beta, _ = profile_beta(vp, dm)
        np.testing.assert_allclose(beta, [3.0])

    def test_zero_cluster_variance_reduces_to_ols(self):
        rng = np.random.default_rng(5)
        frame = pd.DataFrame(
            {
                "g": np.repeat(["a", "b", "c"], 10),
                "x": rng.normal(size=30),
            }
        )
        frame["y"] = 1.0 + 2.0 * frame["x"] + rng.normal(size=30)
        ds = Dataset.from_frame(frame, cluster="g")
        dm = build_design(
            ds,
            ModelSpec(response="y", fixed=("1", "x"), random=("1",), cluster="g"),
        )
        vp = VarianceParams(cov_re=np.zeros((1, 1)), resid_var=1.7)
        beta, _ = profile_beta(vp, dm)
        X = np.column_stack([np.ones(30), frame["x"]])
        ols, *_ = np.linalg.lstsq(X, frame["y"].to_numpy(), rcond=None)
        np.testing.assert_allclose(beta, ols, atol=1e-10)

    def test_three_cluster_brute_force(self):
        rng = np.random.default_rng(6)
        dm, _ = random_tiny_design(rng, q=2, ar1=False)
        vp = VarianceParams(cov_re=random_psd(rng, 2), resid_var=1.3)
        beta, cov = profile_beta(vp, dm)
        blocks = [
            cluster_covariance(vp, dm.Z[j]) for j in range(dm.J)
        ]
        V = sla.block_diag(*blocks)
        X = np.concatenate(dm.X)
        y = np.concatenate(dm.y)
        Vinv = np.linalg.inv(V)
        A = X.T @ Vinv @ X
        np.testing.assert_allclose(beta, np.linalg.solve(A, X.T @ Vinv @ y), atol=1e-9)
        np.testing.assert_allclose(cov, np.linalg.inv(A), atol=1e-9)


class TestLikelihoodProperties:
    def growth_design(self, shift=0.0, relabel=False, seed=9):
        rng = np.random.default_rng(seed)
        J, k = 12, 4
        t = np.tile(np.linspace(0, 1, k), J)
        g = np.repeat(np.arange(J), k)
        u0 = rng.normal(0, 1.0, J)
        u1 = rng.normal(0, 0.6, J)
        y = 2.0 + 1.5 * t + u0[g] + u1[g] * t + rng.normal(0, 0.8, J * k) + shift
        labels = [f"c{j:02d}" for j in range(J)]
        if relabel:  # reverse sort order without touching contents
            labels = [f"c{J - 1 - j:02d}" for j in range(J)]
        frame = pd.DataFrame({"g": np.array(labels)[g], "t": t, "y": y})
        ds = Dataset.from_frame(frame, cluster="g")
        spec = ModelSpec(response="y", fixed=("1", "t"), random=("1", "t"), cluster="g")
        return build_design(ds, spec)

    def test_shift_invariance(self):
        vp = VarianceParams(
            cov_re=np.array([[1.1, 0.2], [0.2, 0.5]]), resid_var=0.7
        )
        base = log_likelihood(vp, self.growth_design())
        shifted = log_likelihood(vp, self.growth_design(shift=5.0))
        assert abs(shifted.beta_hat[0] - base.beta_hat[0] - 5.0) <= 1e-8
        assert abs(shifted.beta_hat[1] - base.beta_hat[1]) <= 1e-8
        assert abs(shifted.loglik - base.loglik) <= 1e-8

    def test_cluster_permutation_invariance(self):
        vp = VarianceParams(
            cov_re=np.array([[1.1, 0.2], [0.2, 0.5]]), resid_var=0.7
        )
        a = log_likelihood(vp, self.growth_design())
        b = log_likelihood(vp, self.growth_design(relabel=True))
        assert abs(a.loglik - b.loglik) <= 1e-9

    def test_zero_psi_matches_ols_deviance(self):
        rng = np.random.default_rng(13)
        frame = pd.DataFrame(
            {"g": np.repeat(["a", "b"], 25), "x": rng.normal(size=50)}
        )
        frame["y"] = 0.3 - 1.2 * frame["x"] + rng.normal(size=50)
        ds = Dataset.from_frame(frame, cluster="g")
        dm = build_design(
            ds, ModelSpec(response="y", fixed=("1", "x"), random=("1",), cluster="g")
        )
        X = np.column_stack([np.ones(50), frame["x"]])
        y = frame["y"].to_numpy()
        ols, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ ols
        s2_ml = float(resid @ resid) / 50
        vp = VarianceParams(cov_re=np.zeros((1, 1)), resid_var=s2_ml)
        value = log_likelihood(vp, dm)
        ols_deviance = 50 * (LOG_2PI + np.log(s2_ml) + 1.0)
        np.testing.assert_allclose(value.deviance, ols_deviance, rtol=1e-12)

    def test_ar1_continuity_at_zero(self):
        rng = np.random.default_rng(14)
        dm, _ = random_tiny_design(rng, q=1, ar1=True)
        cov = random_psd(rng, 1)
        iid = log_likelihood(VarianceParams(cov_re=cov, resid_var=1.2), dm)
        at_zero = log_likelihood(
            VarianceParams(cov_re=cov, resid_var=1.2, ar1_corr=0.0), dm
        )
        near_zero = log_likelihood(
            VarianceParams(cov_re=cov, resid_var=1.2, ar1_corr=1e-9), dm
        )
        assert at_zero.loglik == pytest.approx(iid.loglik, abs=1e-12)
        assert near_zero.loglik == pytest.approx(iid.loglik, abs=1e-6)

    def test_loglik_at_profiled_beta_matches(self):
        rng = np.random.default_rng(15)
        dm, _ = random_tiny_design(rng, q=2, ar1=False)
        vp = VarianceParams(cov_re=random_psd(rng, 2), resid_var=0.9)
        value = log_likelihood(vp, dm)
        at = log_likelihood_at(vp, dm, value.beta_hat)
        assert at == pytest.approx(value.loglik, abs=1e-10)
        # any other beta does worse
        worse = log_likelihood_at(vp, dm, value.beta_hat + 0.05)
        assert worse < value.loglik

    def test_thread_count_does_not_change_result(self):
        rng = np.random.default_rng(16)
        dm, _ = random_tiny_design(rng, q=2, ar1=False)
        vp = VarianceParams(cov_re=random_psd(rng, 2), resid_var=0.9)
        a = log_likelihood(vp, dm, threads=1)
        b = log_likelihood(vp, dm, threads=4)
        assert a.loglik == b.loglik
        np.testing.assert_array_equal(a.beta_hat, b.beta_hat)
