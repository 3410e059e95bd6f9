"""Linear-Gaussian state-space tools for factor models with AR measurement errors.

The state stacks current and lagged factors in companion form with a known
(zero) initial state. Observations are quasi-differenced series with
independent, possibly time-varying measurement variances. Used for the
homoskedastic benchmark's factor draw and as an exact cross-check of the
particle sampler in the Gaussian special case.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class StateSpace:
    """y_t = Z s_t + e_t, e ~ N(0, diag(rdiag_t)); s_t = c + T s_{t-1} + eta, eta ~ N(0, RQR)."""

    z: np.ndarray  # (N, d)
    c: np.ndarray  # (d,)
    tmat: np.ndarray  # (d, d)
    rqr: np.ndarray  # (d, d), rank n block in the top-left corner
    n_shock: int  # rank of the shock block

    @property
    def dim(self) -> int:
        return self.tmat.shape[0]

    def shock_chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.rqr[: self.n_shock, : self.n_shock])


def build_qd_statespace(
    b_level: np.ndarray,
    rho: np.ndarray,
    coef_lags: np.ndarray,
    intercept: np.ndarray,
    omega: np.ndarray,
) -> StateSpace:
    """Companion state space for quasi-differenced data on level factors.

    Observation row i maps state (F_t, F_{t-1}, ...) to
    b_i . F_t - sum_l rho_il b_i . F_{t-l}, so the measurement error is the
    idiosyncratic innovation alone.
    """
    n_series, n_fac = b_level.shape
    lag_f = coef_lags.shape[0]
    lag_v = rho.shape[1]
    n_lags = max(lag_f, lag_v + 1)
    d = n_fac * n_lags

    z = np.zeros((n_series, d))
    z[:, :n_fac] = b_level
    for l in range(1, lag_v + 1):
        z[:, l * n_fac:(l + 1) * n_fac] = -rho[:, l - 1:l] * b_level

    tmat = np.zeros((d, d))
    for l in range(lag_f):
        tmat[:n_fac, l * n_fac:(l + 1) * n_fac] = coef_lags[l]
    if n_lags > 1:
        tmat[n_fac:, :-n_fac] = np.eye(d - n_fac)
    c = np.zeros(d)
    c[:n_fac] = intercept
    rqr = np.zeros((d, d))
    rqr[:n_fac, :n_fac] = omega
    return StateSpace(z=z, c=c, tmat=tmat, rqr=rqr, n_shock=n_fac)


def kalman_filter(
    ss: StateSpace, y: np.ndarray, rdiag: np.ndarray, s0: np.ndarray
) -> dict:
    """Forward pass; returns loglik plus the quantities the smoother needs."""
    t_len, n_obs = y.shape
    d = ss.dim
    a = np.empty((t_len, d))
    p = np.empty((t_len, d, d))
    v = np.empty((t_len, n_obs))
    finv = np.empty((t_len, n_obs, n_obs))
    lmat = np.empty((t_len, d, d))
    loglik = 0.0
    a_cur = ss.c + ss.tmat @ s0
    p_cur = ss.rqr.copy()
    for t in range(t_len):
        a[t] = a_cur
        p[t] = p_cur
        pz = p_cur @ ss.z.T
        f = ss.z @ pz + np.diag(rdiag[t])
        f = 0.5 * (f + f.T)
        cf = np.linalg.cholesky(f)
        fi = np.linalg.inv(cf)
        finv[t] = fi.T @ fi
        v[t] = y[t] - ss.z @ a_cur
        half = fi @ v[t]
        loglik += -0.5 * (n_obs * np.log(2.0 * np.pi) + 2.0 * np.sum(np.log(np.diag(cf))) + half @ half)
        k = ss.tmat @ pz @ finv[t]
        lmat[t] = ss.tmat - k @ ss.z
        a_cur = ss.c + ss.tmat @ a_cur + k @ v[t]
        p_cur = ss.tmat @ p_cur @ lmat[t].T + ss.rqr
        p_cur = 0.5 * (p_cur + p_cur.T)
    return {"loglik": float(loglik), "a": a, "p": p, "v": v, "finv": finv, "lmat": lmat}


def smooth_moments(
    ss: StateSpace, y: np.ndarray, rdiag: np.ndarray, s0: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed state means and marginal variances by the backward r/N recursions."""
    kf = kalman_filter(ss, y, rdiag, s0)
    t_len = y.shape[0]
    d = ss.dim
    means = np.empty((t_len, d))
    variances = np.empty((t_len, d, d))
    r = np.zeros(d)
    nmat = np.zeros((d, d))
    for t in range(t_len - 1, -1, -1):
        zfi = ss.z.T @ kf["finv"][t]
        r = zfi @ kf["v"][t] + kf["lmat"][t].T @ r
        nmat = zfi @ ss.z + kf["lmat"][t].T @ nmat @ kf["lmat"][t]
        means[t] = kf["a"][t] + kf["p"][t] @ r
        variances[t] = kf["p"][t] - kf["p"][t] @ nmat @ kf["p"][t]
    return means, variances


def simulation_smoother(
    ss: StateSpace, y: np.ndarray, rdiag: np.ndarray, s0: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One joint draw of the state path given data, by mean correction.

    Simulates an unconditional path and data from the model, smooths both the
    real and synthetic data, and returns smoothed(y) + simulated - smoothed(y+).
    """
    t_len, n_obs = y.shape
    d = ss.dim
    chol = ss.shock_chol()
    s_plus = np.empty((t_len, d))
    y_plus = np.empty((t_len, n_obs))
    s_prev = s0
    eta = rng.standard_normal((t_len, ss.n_shock)) @ chol.T
    eps = rng.standard_normal((t_len, n_obs)) * np.sqrt(rdiag)
    for t in range(t_len):
        s_cur = ss.c + ss.tmat @ s_prev
        s_cur[: ss.n_shock] += eta[t]
        s_plus[t] = s_cur
        y_plus[t] = ss.z @ s_cur + eps[t]
        s_prev = s_cur
    means_obs, _ = smooth_moments(ss, y, rdiag, s0)
    means_plus, _ = smooth_moments(ss, y_plus, rdiag, s0)
    return means_obs + s_plus - means_plus
