"""Tests for the conditional particle filter that draws the factor path.

The sharp test uses the linear-Gaussian special case (no volatility factors,
unit mixing scales): the sweep is a Markov kernel whose invariant law is the
exact smoothing distribution, so feeding it independent simulation-smoother
draws must return samples with the smoother's own moments.
"""
from __future__ import annotations

import numpy as np
import pytest
from pytest import approx

from lvdfm.model import FactorPath, ParamDraw, quasi_difference
from lvdfm.pgas import ParticleDegeneracyError, _categorical, ancestor_logweights, pgas_draw
from lvdfm.statespace import build_qd_statespace, simulation_smoother, smooth_moments


def linear_params(n=4, t=40, lag_f=1, rho_val=0.4, seed=0):
    """Model with no volatility factors and unit mixing scales."""
    rng = np.random.default_rng(seed)
    b_level = rng.uniform(0.6, 1.4, size=(n, 1))
    if lag_f == 1:
        gamma = np.array([[0.6], [0.2]])
    else:
        gamma = np.array([[0.5], [0.2], [0.1]])
    lag_v = 1 if rho_val is not None else 0
    rho = (np.linspace(0.2, rho_val, n)[:, None] if lag_v else np.zeros((n, 0)))
    return ParamDraw(
        b_level=b_level, b_vol=np.zeros((n, 0)), rho=rho,
        lam=np.ones((n, t)), nu=np.full(n, 10.0), gamma=gamma,
        a_mat=np.eye(1), h_diag=np.array([0.64]))


def exact_posterior(params, data):
    """Smoothed moments and a sampler for the factor path given the data."""
    s = max(params.lag_factor, params.rho.shape[1])
    lag_v = params.rho.shape[1]
    x_qd = quasi_difference(data, params.rho)[:, s - lag_v:]
    ss = build_qd_statespace(params.b_level, params.rho, params.coef_lags(),
                             params.intercept(), params.omega())
    y = x_qd.T
    rdiag = np.ones_like(y)
    s0 = np.zeros(ss.dim)
    means, variances = smooth_moments(ss, y, rdiag, s0)

    def draw(rng):
        return simulation_smoother(ss, y, rdiag, s0, rng)[:, 0]

    return s, means[:, 0], variances[:, 0, 0], draw


def check_invariance(params, data, n_particles, reps, seed):
    s, mean_ex, var_ex, draw = exact_posterior(params, data)
    t = data.shape[1]
    ref_rng = np.random.default_rng(seed)
    ker_rng = np.random.default_rng(seed + 1)
    out = np.empty((reps, t - s))
    for rep in range(reps):
        ref = np.zeros((t, 1))
        ref[s:, 0] = draw(ref_rng)
        new = pgas_draw(data, params, FactorPath(ref, n_level=1),
                        n_particles, ker_rng)
        assert np.all(new.path[:s] == 0.0)
        out[rep] = new.path[s:, 0]
    se = np.sqrt(var_ex / reps)
    assert np.all(np.abs(out.mean(axis=0) - mean_ex) < 5 * se)
    got_var = out.var(axis=0, ddof=1)
    assert got_var == approx(var_ex, rel=0.5)
    assert got_var.mean() == approx(var_ex.mean(), rel=0.12)


class TestLinearGaussianInvariance:
    def test_ar1_idiosyncratic(self):
        params = linear_params(lag_f=1, rho_val=0.4, seed=1)
        data = np.random.default_rng(2).normal(size=(4, 40))
        check_invariance(params, data, n_particles=20, reps=300, seed=3)

    def test_two_factor_lags_no_idio_ar(self):
        params = linear_params(lag_f=2, rho_val=None, seed=4)
        data = np.random.default_rng(5).normal(size=(4, 40))
        check_invariance(params, data, n_particles=20, reps=300, seed=6)


class TestAncestorLogweights:
    def oracle(self, logw, hist, ref_fut, coef_lags, intercept, om_chol):
        p, lag_f = hist.shape[0], coef_lags.shape[0]
        omega_inv = np.linalg.inv(om_chol @ om_chol.T)
        out = logw.copy().astype(float)
        m = min(ref_fut.shape[0], lag_f)
        for i in range(p):
            for jj in range(m):
                mean = intercept.copy()
                for lag in range(1, lag_f + 1):
                    past = ref_fut[jj - lag] if lag <= jj else hist[i, lag - jj - 1]
                    mean = mean + coef_lags[lag - 1] @ past
                resid = ref_fut[jj] - mean
                out[i] -= 0.5 * resid @ omega_inv @ resid
        return out

    @pytest.mark.parametrize("lag_f,m", [(1, 1), (3, 3), (3, 2), (2, 1)])
    def test_matches_direct_transition_scoring(self, lag_f, m):
        rng = np.random.default_rng(7 + lag_f)
        p, n = 6, 2
        logw = rng.normal(size=p)
        hist = rng.normal(size=(p, max(lag_f, 1), n))
        ref_fut = rng.normal(size=(m, n))
        coef_lags = 0.3 * rng.normal(size=(lag_f, n, n))
        intercept = rng.normal(size=n)
        om_chol = np.linalg.cholesky(np.array([[1.0, 0.3], [0.3, 0.8]]))
        got = ancestor_logweights(logw, hist, ref_fut, coef_lags, intercept, om_chol)
        want = self.oracle(logw, hist, ref_fut, coef_lags, intercept, om_chol)
        assert got == approx(want, abs=1e-10)

    def test_extra_future_rows_ignored(self):
        rng = np.random.default_rng(8)
        logw = rng.normal(size=4)
        hist = rng.normal(size=(4, 2, 1))
        coef_lags = 0.4 * rng.normal(size=(2, 1, 1))
        intercept = np.zeros(1)
        om_chol = np.eye(1)
        ref_fut = rng.normal(size=(5, 1))
        full = ancestor_logweights(logw, hist, ref_fut, coef_lags, intercept, om_chol)
        trunc = ancestor_logweights(logw, hist, ref_fut[:2], coef_lags, intercept, om_chol)
        assert np.array_equal(full, trunc)


class TestCategorical:
    def test_inverse_cdf(self):
        logw = np.log(np.array([0.2, 0.3, 0.5]))
        assert _categorical(logw, 0.1) == 0
        assert _categorical(logw, 0.25) == 1
        assert _categorical(logw, 0.999) == 2
        assert _categorical(logw, 1.0) == 2  # clamped to the last index

    def test_zero_weight_never_selected(self):
        logw = np.array([-np.inf, 0.0])
        for u in (0.0, 0.5, 1.0):
            assert _categorical(logw, u) == 1


def vol_params(n=3, t=30, b_vol_scale=0.5, vol_intercept=0.0, h=0.3):
    b_level = np.ones((n, 1))
    b_vol = np.full((n, 1), b_vol_scale)
    gamma = np.array([[0.5, 0.0], [0.0, 0.5], [0.0, vol_intercept]])
    return ParamDraw(
        b_level=b_level, b_vol=b_vol, rho=np.zeros((n, 1)),
        lam=np.ones((n, t)), nu=np.full(n, 10.0), gamma=gamma,
        a_mat=np.eye(2), h_diag=np.full(2, h))


class TestPgasDraw:
    def test_reproducible(self):
        params = vol_params()
        data = np.random.default_rng(9).normal(size=(3, 30))
        ref = FactorPath(np.zeros((30, 2)), n_level=1)
        p1 = pgas_draw(data, params, ref, 15, np.random.default_rng(10))
        p2 = pgas_draw(data, params, ref, 15, np.random.default_rng(10))
        p3 = pgas_draw(data, params, ref, 15, np.random.default_rng(11))
        assert np.array_equal(p1.path, p2.path)
        assert not np.array_equal(p1.path, p3.path)
        assert p1.path.shape == (30, 2)
        assert p1.n_level == 1

    def test_always_resampling_threshold_matches_default(self):
        params = vol_params()
        data = np.random.default_rng(12).normal(size=(3, 30))
        ref = FactorPath(np.zeros((30, 2)), n_level=1)
        base = pgas_draw(data, params, ref, 15, np.random.default_rng(13))
        ess1 = pgas_draw(data, params, ref, 15, np.random.default_rng(13),
                         resample_ess=1.0)
        assert np.array_equal(base.path, ess1.path)

    def test_rare_resampling_still_runs(self):
        params = vol_params()
        data = np.random.default_rng(14).normal(size=(3, 30))
        ref = FactorPath(np.zeros((30, 2)), n_level=1)
        out = pgas_draw(data, params, ref, 15, np.random.default_rng(15),
                        resample_ess=1e-9)
        assert np.all(np.isfinite(out.path))

    def test_degeneracy_detected(self):
        # an enormous volatility loading pushes every particle's exponent out
        # of the stable range, including the pinned reference
        params = vol_params(b_vol_scale=1e6, vol_intercept=5.0, h=1e-6)
        data = np.random.default_rng(16).normal(size=(3, 30))
        ref_path = np.zeros((30, 2))
        ref_path[:, 1] = 5.0
        with pytest.raises(ParticleDegeneracyError, match="particle degeneracy at t="):
            pgas_draw(data, params, FactorPath(ref_path, n_level=1), 15,
                      np.random.default_rng(17))

    def test_series_too_short(self):
        params = vol_params(t=1)
        with pytest.raises(ValueError, match="series too short"):
            pgas_draw(np.zeros((3, 1)), params, FactorPath(np.zeros((1, 2)), 1),
                      10, np.random.default_rng(18))
