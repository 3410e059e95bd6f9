"""Shared small numerics: RNG substreams, companion forms, distribution helpers."""
from __future__ import annotations

import numpy as np


def rng_from(seed: int, *key: int) -> np.random.Generator:
    """Generator on a reproducible substream addressed by (seed, *key).

    The same (seed, key) always yields the same stream, independent of how
    many other substreams were created, so per-origin / per-repetition work
    parallelizes without changing results.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def companion_matrix(coef_lags: np.ndarray) -> np.ndarray:
    """Stack (L, n, n) lag coefficient matrices into the (Ln, Ln) companion form."""
    L, n, _ = coef_lags.shape
    comp = np.zeros((L * n, L * n))
    comp[:n, :] = np.concatenate([coef_lags[l] for l in range(L)], axis=1)
    if L > 1:
        comp[n:, :-n] = np.eye((L - 1) * n)
    return comp


def spectral_radius(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


def ar_companion_radius(rho: np.ndarray) -> float:
    """Spectral radius of the companion matrix of a univariate AR(L) with coefficients rho."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    return spectral_radius(companion_matrix(rho.reshape(-1, 1, 1)))


def gamma_mean_dof(rng: np.random.Generator, mean, dof, size=None):
    """Draw from a Gamma distribution parameterized by mean and degrees of freedom.

    Equivalent shape is dof/2 and rate dof/(2*mean), so the draw has the
    requested mean and Var = 2*mean^2/dof.
    """
    mean = np.asarray(mean, dtype=float)
    dof = np.asarray(dof, dtype=float)
    return rng.gamma(shape=dof / 2.0, scale=2.0 * mean / dof, size=size)


def inv_gamma_scale_dof(rng: np.random.Generator, scale, dof, size=None):
    """Inverse-gamma draw parameterized by scale and degrees of freedom: scale / chi2(dof)."""
    scale = np.asarray(scale, dtype=float)
    dof = np.asarray(dof, dtype=float)
    if size is None and scale.shape:
        size = scale.shape
    return scale / rng.chisquare(dof, size=size)


def ar1_fit(series: np.ndarray) -> tuple[float, float, float]:
    """OLS AR(1) fit with intercept; returns (slope, residual sd, intercept)."""
    y = series[1:]
    x = np.column_stack([series[:-1], np.ones(len(y))])
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    dof = max(len(y) - 2, 1)
    sd = float(np.sqrt(resid @ resid / dof))
    return float(coef[0]), sd, float(coef[1])
