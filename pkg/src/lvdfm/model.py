"""Core model objects for the level-volatility dynamic factor model.

Each series loads a small set of level factors; its idiosyncratic remainder
follows an AR with innovation variance driven by common volatility factors
and a per-observation gamma mixing scale (so innovations are Student-t
marginally). Level and log-volatility factors evolve jointly as a VAR whose
innovation covariance ties the two blocks together.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

# Log-variance exponents beyond this are treated as numerical failure rather
# than clipped: estimation code must reject such states explicitly.
EXPONENT_CLAMP = 30.0


class VolatilityOverflowError(RuntimeError):
    """Raised when a log-variance exponent leaves the representable range."""


@dataclass
class ModelConfig:
    """Dimensions, lag orders, prior scales and sampler settings."""

    n_series: int
    n_level: int = 1
    n_vol: int = 1
    lag_factor: int = 2
    lag_idio: int = 2
    n_draws: int = 2000
    n_burn: int = 500
    thin: int = 2
    n_particles: int = 100
    minnesota_tau: float = 0.1
    intercept_tightness: float = 1000.0
    nu0: float = 20.0
    mh_step_volload: float = 0.2
    mh_step_nu: float = 0.5
    resample_ess: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_series < 1 or self.n_level < 1 or self.n_vol < 0:
            raise ValueError("factor dimensions must be positive (n_vol may be zero)")
        if self.n_level + self.n_vol > self.n_series:
            raise ValueError("more factors than series")
        if self.lag_factor < 1 or self.lag_idio < 0:
            raise ValueError("lag_factor must be >= 1 and lag_idio >= 0")
        if self.n_draws <= self.n_burn:
            raise ValueError("n_draws must exceed n_burn")
        if self.thin < 1 or self.n_particles < 2:
            raise ValueError("thin must be >= 1 and n_particles >= 2")
        if self.minnesota_tau <= 0 or self.intercept_tightness <= 0 or self.nu0 <= 0:
            raise ValueError("prior scales must be positive")
        if self.resample_ess is not None and not 0.0 < self.resample_ess <= 1.0:
            raise ValueError("resample_ess must lie in (0, 1]")

    @property
    def n_factors(self) -> int:
        return self.n_level + self.n_vol

    @property
    def presample(self) -> int:
        """Number of leading periods conditioned on (factors pinned at zero)."""
        return max(self.lag_factor, self.lag_idio)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Panel:
    """Stationarity-transformed, standardized data panel, series in rows."""

    data: np.ndarray  # (N, T)
    tcodes: list[str]
    means: np.ndarray  # (N,) pre-standardization means
    stds: np.ndarray  # (N,) pre-standardization stds
    labels: list[str]
    dates: list[str] | None = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.stds = np.asarray(self.stds, dtype=float)
        n, t = self.data.shape
        if not (len(self.tcodes) == len(self.labels) == self.means.size == self.stds.size == n):
            raise ValueError("per-series metadata length mismatch")
        if self.dates is not None and len(self.dates) != t:
            raise ValueError("dates length mismatch")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("panel contains non-finite values")
        if np.any(self.stds <= 0):
            raise ValueError("panel stds must be positive")

    @property
    def n_series(self) -> int:
        return self.data.shape[0]

    @property
    def n_periods(self) -> int:
        return self.data.shape[1]

    def raw(self) -> np.ndarray:
        """Transformed data before standardization."""
        return self.data * self.stds[:, None] + self.means[:, None]

    def destandardize(self, values: np.ndarray, series_idx: np.ndarray | list[int]) -> np.ndarray:
        """Map standardized values (..., len(series_idx)) back to transformed units."""
        idx = np.asarray(series_idx, dtype=int)
        return values * self.stds[idx] + self.means[idx]

    def window(self, t_end: int) -> "Panel":
        """Panel restricted to the first t_end periods.

        The slice keeps the parent's standardization state so expanding-window
        estimates stay on one scale; rescaling per window would break the unit
        anchor loadings the estimation pins.
        """
        if not 1 < t_end <= self.n_periods:
            raise ValueError("window end out of range")
        data = self.data[:, :t_end]
        if np.any(data.std(axis=1) <= 0):
            raise ValueError("constant series in window")
        return Panel(
            data=data.copy(),
            tcodes=list(self.tcodes),
            means=self.means.copy(),
            stds=self.stds.copy(),
            labels=list(self.labels),
            dates=self.dates[:t_end] if self.dates is not None else None,
        )


@dataclass
class FactorPath:
    """Joint path of level and log-volatility factors, level columns first."""

    path: np.ndarray  # (T, J + k)
    n_level: int

    def __post_init__(self) -> None:
        self.path = np.asarray(self.path, dtype=float)
        if self.path.ndim != 2 or not 0 < self.n_level <= self.path.shape[1]:
            raise ValueError("bad factor path shape")

    @property
    def n_vol(self) -> int:
        return self.path.shape[1] - self.n_level

    @property
    def level(self) -> np.ndarray:
        return self.path[:, : self.n_level]

    @property
    def vol(self) -> np.ndarray:
        return self.path[:, self.n_level:]

    def copy(self) -> "FactorPath":
        return FactorPath(self.path.copy(), self.n_level)


@dataclass
class ParamDraw:
    """One full draw of the static parameters and mixing scales.

    a_mat is unit lower triangular and h_diag positive, so the factor
    innovation covariance a_mat^-1 diag(h_diag) a_mat^-T is positive definite
    by construction.
    """

    b_level: np.ndarray  # (N, J)
    b_vol: np.ndarray  # (N, k)
    rho: np.ndarray  # (N, L_v)
    lam: np.ndarray  # (N, T) gamma mixing scales
    nu: np.ndarray  # (N,) Student-t degrees of freedom
    gamma: np.ndarray  # ((J+k)*L_F + 1, J+k) VAR coefficients, intercept last row
    a_mat: np.ndarray  # (J+k, J+k)
    h_diag: np.ndarray  # (J+k,)

    def validate(self) -> None:
        n_fac = self.a_mat.shape[0]
        if self.b_level.shape[0] != self.b_vol.shape[0] or self.b_level.shape[0] != self.rho.shape[0]:
            raise ValueError("loading row mismatch")
        if self.b_level.shape[1] + self.b_vol.shape[1] != n_fac:
            raise ValueError("factor count mismatch")
        if (self.gamma.shape[0] - 1) % n_fac != 0 or self.gamma.shape[1] != n_fac:
            raise ValueError("VAR coefficient shape mismatch")
        if not np.allclose(np.triu(self.a_mat, 1), 0.0) or not np.allclose(np.diag(self.a_mat), 1.0):
            raise ValueError("a_mat must be unit lower triangular")
        for name, arr in (("h_diag", self.h_diag), ("lam", self.lam), ("nu", self.nu)):
            if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"{name} must be finite and positive")
        for arr in (self.b_level, self.b_vol, self.rho, self.gamma):
            if np.any(~np.isfinite(arr)):
                raise ValueError("non-finite parameter value")

    @property
    def n_level(self) -> int:
        return self.b_level.shape[1]

    @property
    def n_vol(self) -> int:
        return self.b_vol.shape[1]

    @property
    def lag_factor(self) -> int:
        return (self.gamma.shape[0] - 1) // self.a_mat.shape[0]

    def omega(self) -> np.ndarray:
        """Factor innovation covariance implied by (a_mat, h_diag)."""
        a_inv = solve_triangular(self.a_mat, np.eye(self.a_mat.shape[0]), lower=True)
        return a_inv @ np.diag(self.h_diag) @ a_inv.T

    def omega_chol(self) -> np.ndarray:
        """Lower-triangular factor L with L L' equal to the innovation covariance."""
        a_inv = solve_triangular(self.a_mat, np.eye(self.a_mat.shape[0]), lower=True)
        return a_inv * np.sqrt(self.h_diag)

    def coef_lags(self) -> np.ndarray:
        """VAR lag coefficients as an (L_F, n, n) stack; gamma column j is equation j."""
        n = self.a_mat.shape[0]
        lf = self.lag_factor
        return np.stack([self.gamma[l * n:(l + 1) * n, :].T for l in range(lf)])

    def intercept(self) -> np.ndarray:
        return self.gamma[-1, :].copy()

    def copy(self) -> "ParamDraw":
        return ParamDraw(*(getattr(self, f.name).copy() for f in dataclasses.fields(self)))


def idio_variance(b_vol_i: np.ndarray, volfactor_t: np.ndarray, lam_it: float) -> float:
    """Idiosyncratic innovation variance exp(b_vol_i . volfactor_t) / lam_it."""
    expo = float(np.dot(b_vol_i, volfactor_t))
    if not np.isfinite(expo) or abs(expo) > EXPONENT_CLAMP:
        raise VolatilityOverflowError("volatility overflow")
    if lam_it <= 0:
        raise ValueError("mixing scale must be positive")
    return float(np.exp(expo) / lam_it)


def quasi_difference(series: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Filter s_t - sum_l rho_l s_{t-l}; output starts at t = len(rho), length T - len(rho).

    Accepts a single series (T,) with rho (L,) or a batch (N, T) with rho (N, L).
    """
    series = np.asarray(series, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.ndim == 0:
        rho = rho[None]
    L = rho.shape[-1]
    if L == 0:
        return series.copy()
    T = series.shape[-1]
    if T <= L:
        raise ValueError("series too short")
    out = series[..., L:].copy()
    for l in range(1, L + 1):
        out -= rho[..., l - 1:l] * series[..., L - l:-l]
    return out


def obs_loglik(
    x_qd_t: np.ndarray,
    f_qd_t: np.ndarray,
    volfactor_t: np.ndarray,
    params: ParamDraw,
    t: int,
) -> float:
    """Log density of quasi-differenced observations at time t given factors.

    x_qd_t holds x_it - sum_l rho_il x_{i,t-l} and f_qd_t the matching
    per-series quasi-differenced level factors (N, J); innovations are
    independent across series with variance exp(b_vol_i . volfactor_t)/lam_it.
    """
    expo = params.b_vol @ volfactor_t if params.n_vol else np.zeros(params.b_level.shape[0])
    if np.any(~np.isfinite(expo)) or np.any(np.abs(expo) > EXPONENT_CLAMP):
        raise VolatilityOverflowError("volatility overflow")
    r = np.exp(expo) / params.lam[:, t]
    resid = x_qd_t - np.sum(params.b_level * f_qd_t, axis=1)
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * r) + resid * resid / r))
