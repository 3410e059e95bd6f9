"""Initialization and prior construction.

Level factors are initialized by principal components of the panel,
volatility factors by principal components of a smoothed log squared
residual proxy. Factor VAR shrinkage is imposed through Minnesota-style
dummy observations appended to the regression data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FactorPath, ModelConfig, Panel, ParamDraw
from .util import ar1_fit

LOGVOL_FLOOR = 1e-6


@dataclass
class PriorSet:
    """Prior hyperparameters and the dummy observations encoding VAR shrinkage."""

    bload_mean: np.ndarray  # (N, J)
    bload_var: float
    volload_mean: np.ndarray  # (N, k)
    volload_var: float
    rho_var: float
    a_var: float
    h_scale: float
    h_dof: float
    nu0: float
    dummy_y: np.ndarray  # (n*L_F + 1, n)
    dummy_x: np.ndarray  # (n*L_F + 1, n*L_F + 1)

    def validate(self) -> None:
        for v in (self.bload_var, self.volload_var, self.rho_var, self.a_var,
                  self.h_scale, self.h_dof, self.nu0):
            if v <= 0:
                raise ValueError("prior scales must be positive")
        if self.dummy_y.shape[0] != self.dummy_x.shape[0]:
            raise ValueError("dummy observation row mismatch")


def pca_extract(data: np.ndarray, n_comp: int) -> tuple[np.ndarray, np.ndarray]:
    """Principal components of an (N, T) panel by SVD of the row-demeaned data.

    Returns factors (T, n_comp) scaled to unit sample variance and loadings
    (N, n_comp) so that loadings @ factors.T is the rank-n_comp fit of the
    demeaned data. Each loading column is sign-normalized to a positive sum.
    """
    data = np.asarray(data, dtype=float)
    n, t = data.shape
    if n_comp < 1 or n_comp > min(n, t):
        raise ValueError("component count out of range")
    demeaned = data - data.mean(axis=1, keepdims=True)
    u, s, vt = np.linalg.svd(demeaned, full_matrices=False)
    if np.sum(s > 1e-10 * s[0]) < n_comp:
        raise ValueError("insufficient rank")
    factors = np.sqrt(t) * vt[:n_comp].T
    loadings = u[:, :n_comp] * s[:n_comp] / np.sqrt(t)
    signs = np.where(loadings.sum(axis=0) < 0, -1.0, 1.0)
    return factors * signs, loadings * signs


def init_idio_logvol(residuals: np.ndarray, window: int = 9) -> np.ndarray:
    """Smoothed log squared residuals as a volatility proxy.

    Centered moving average of log(residual^2 + floor) over the given odd
    window, truncated at the sample edges.
    """
    residuals = np.asarray(residuals, dtype=float)
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    t = residuals.shape[-1]
    if t < window:
        raise ValueError("series too short")
    logsq = np.log(residuals**2 + LOGVOL_FLOOR)
    half = window // 2
    csum = np.cumsum(np.concatenate([np.zeros(logsq.shape[:-1] + (1,)), logsq], axis=-1), axis=-1)
    starts = np.maximum(np.arange(t) - half, 0)
    ends = np.minimum(np.arange(t) + half + 1, t)
    return (csum[..., ends] - csum[..., starts]) / (ends - starts)


def minnesota_dummies(
    factor_data: np.ndarray,
    lags: int,
    tau: float,
    intercept_tightness: float,
    ar1_sigmas: np.ndarray | None = None,
    ar1_means: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Dummy observations implementing Minnesota shrinkage for a VAR(lags).

    Regressors are ordered lag-1 block, ..., lag-p block, intercept last.
    Rows: n own-lag centering rows scaled by delta_m * sigma_m / tau, n*(lags-1)
    zero-mean rows for higher lags, and one loose intercept row. The implied
    prior standard deviation on coefficient (m, lag l, variable n) is
    tau * sigma_m / (l * sigma_n); own first lags center on the AR(1) slopes.

    ar1_sigmas / ar1_means default to per-column AR(1) fits on factor_data.
    """
    factor_data = np.asarray(factor_data, dtype=float)
    t, n = factor_data.shape
    if lags < 1:
        raise ValueError("lags must be >= 1")
    if tau <= 0 or intercept_tightness <= 0:
        raise ValueError("shrinkage scales must be positive")
    if ar1_sigmas is None or ar1_means is None:
        fits = [ar1_fit(factor_data[:, j]) for j in range(n)]
        if ar1_sigmas is None:
            ar1_sigmas = np.array([f[1] for f in fits])
        if ar1_means is None:
            ar1_means = np.array([f[0] for f in fits])
    ar1_sigmas = np.asarray(ar1_sigmas, dtype=float)
    ar1_means = np.asarray(ar1_means, dtype=float)
    if np.any(ar1_sigmas <= 0):
        raise ValueError("ar1_sigmas must be positive")

    n_reg = n * lags + 1
    dummy_y = np.zeros((n_reg, n))
    dummy_x = np.zeros((n_reg, n_reg))
    dummy_y[:n, :] = np.diag(ar1_means * ar1_sigmas) / tau
    for l in range(lags):
        block = slice(l * n, (l + 1) * n)
        dummy_x[block, block] = (l + 1) * np.diag(ar1_sigmas) / tau
    dummy_x[-1, -1] = 1.0 / intercept_tightness
    return dummy_y, dummy_x


def _anchor_rotation(loadings: np.ndarray, factors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate so the top square loading block is the identity, if invertible."""
    r = loadings.shape[1]
    head = loadings[:r, :r]
    if abs(np.linalg.det(head)) < 1e-10:
        out = loadings.copy()
        out[:r] = np.eye(r)
        return out, factors
    return loadings @ np.linalg.inv(head), factors @ head.T


def build_priorset(
    panel: Panel, config: ModelConfig
) -> tuple[PriorSet, ParamDraw, FactorPath]:
    """Assemble priors and an initial draw from principal-component estimates.

    Loading priors center on the PCA estimates rotated to satisfy the
    identity anchoring of the leading series; VAR shrinkage dummies are built
    from the initialized factor path. The initial draw starts all mixing
    scales at 1, degrees of freedom at nu0, AR coefficients at 0.
    """
    n, t = panel.data.shape
    j, k = config.n_level, config.n_vol
    s = config.presample
    if t <= s + config.lag_factor + 8:
        raise ValueError("series too short")

    f_level, b_level = pca_extract(panel.data, j)
    b_level, f_level = _anchor_rotation(b_level, f_level)
    resid = panel.data - b_level @ f_level.T

    if k > 0:
        logvol = init_idio_logvol(resid)
        f_vol, b_vol = pca_extract(logvol, k)
        b_vol, f_vol = _anchor_rotation(b_vol, f_vol)
        path = np.column_stack([f_level, f_vol])
    else:
        b_vol = np.zeros((n, 0))
        path = f_level.copy()
    path[:s, :] = 0.0
    factors = FactorPath(path, n_level=j)

    dummy_y, dummy_x = minnesota_dummies(
        path[s:], config.lag_factor, config.minnesota_tau, config.intercept_tightness
    )
    priors = PriorSet(
        bload_mean=b_level.copy(),
        bload_var=1.0,
        volload_mean=b_vol.copy(),
        volload_var=1.0,
        rho_var=1.0,
        a_var=10.0,
        h_scale=0.1,
        h_dof=3.0,
        nu0=config.nu0,
        dummy_y=dummy_y,
        dummy_x=dummy_x,
    )
    priors.validate()

    n_fac = j + k
    gamma0 = _ls_var_fit(path, config.lag_factor, s, dummy_y, dummy_x)
    b_level0 = b_level.copy()
    b_level0[:j] = np.eye(j)
    b_vol0 = b_vol.copy()
    if k > 0:
        b_vol0[:k] = np.eye(k)
    init = ParamDraw(
        b_level=b_level0,
        b_vol=b_vol0,
        rho=np.zeros((n, config.lag_idio)),
        lam=np.ones((n, t)),
        nu=np.full(n, config.nu0),
        gamma=gamma0,
        a_mat=np.eye(n_fac),
        h_diag=np.ones(n_fac),
    )
    init.validate()
    return priors, init, factors


def var_design(path: np.ndarray, lags: int, start: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressand rows start..T-1 and lagged regressors [lag1..lagp, 1] for a VAR."""
    t, n = path.shape
    if start < lags:
        raise ValueError("start must cover the lag window")
    y = path[start:]
    x = np.ones((t - start, n * lags + 1))
    for l in range(1, lags + 1):
        x[:, (l - 1) * n: l * n] = path[start - l: t - l]
    return y, x


def _ls_var_fit(
    path: np.ndarray, lags: int, start: int, dummy_y: np.ndarray, dummy_x: np.ndarray
) -> np.ndarray:
    y, x = var_design(path, lags, start)
    y_aug = np.vstack([y, dummy_y])
    x_aug = np.vstack([x, dummy_x])
    coef, *_ = np.linalg.lstsq(x_aug, y_aug, rcond=None)
    return coef
