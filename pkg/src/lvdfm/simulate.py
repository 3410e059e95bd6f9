"""Synthetic panels from the level-volatility factor model.

The generating process uses a VAR(1) for the joint (level, log-volatility)
factor vector, AR(1) idiosyncratic components with gamma mixing scales, and
identity loading blocks on the leading series so simulated parameters line
up with the estimation normalization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import FactorPath, Panel
from .util import rng_from, spectral_radius


@dataclass
class DgpSpec:
    """Calibration of the simulated model."""

    n_series: int = 100
    n_level: int = 1
    n_vol: int = 1
    t_total: int = 600
    t_burn: int = 100
    phi: np.ndarray = field(default_factory=lambda: np.array([[0.9, -0.1], [0.1, 0.9]]))
    sigma: np.ndarray = field(default_factory=lambda: np.array([[0.2, 0.02], [0.02, 0.2]]))
    rho_range: tuple[float, float] = (0.1, 0.7)
    nu_range: tuple[int, int] = (10, 30)
    loading_scale: float = 1.0
    identity_blocks: bool = True

    def __post_init__(self) -> None:
        self.phi = np.asarray(self.phi, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        n_fac = self.n_level + self.n_vol
        if self.phi.shape != (n_fac, n_fac) or self.sigma.shape != (n_fac, n_fac):
            raise ValueError("phi and sigma must be (n_level+n_vol) square")
        if spectral_radius(self.phi) >= 1.0:
            raise ValueError("factor VAR must be stable")
        if not np.allclose(self.sigma, self.sigma.T) or np.any(np.linalg.eigvalsh(self.sigma) <= 0):
            raise ValueError("sigma must be symmetric positive definite")
        if not 0 < self.t_burn < self.t_total:
            raise ValueError("need 0 < t_burn < t_total")
        if not -1.0 < self.rho_range[0] <= self.rho_range[1] < 1.0:
            raise ValueError("rho_range must lie inside (-1, 1)")
        if not 2 < self.nu_range[0] <= self.nu_range[1]:
            raise ValueError("nu_range must start above 2")
        if self.n_series < self.n_level + self.n_vol:
            raise ValueError("more factors than series")

    @property
    def n_kept(self) -> int:
        return self.t_total - self.t_burn


@dataclass
class GroundTruth:
    """Generating parameters and latent paths over the kept sample."""

    factors: FactorPath
    b_level: np.ndarray
    b_vol: np.ndarray
    rho: np.ndarray  # (N, 1)
    nu: np.ndarray
    lam: np.ndarray  # (N, T)
    r: np.ndarray  # (N, T) idiosyncratic innovation variances


def default_dgp() -> DgpSpec:
    return DgpSpec()


def quarter_labels(n: int, start_year: int = 1960, start_quarter: int = 1) -> list[str]:
    out = []
    y, q = start_year, start_quarter
    for _ in range(n):
        out.append(f"{y}Q{q}")
        q += 1
        if q == 5:
            y, q = y + 1, 1
    return out


def simulate_panel(spec: DgpSpec, seed: int) -> tuple[Panel, GroundTruth]:
    """Draw one panel; identical (spec, seed) give bitwise-identical output."""
    rng = rng_from(seed)
    n, j, k = spec.n_series, spec.n_level, spec.n_vol
    n_fac = j + k
    t_tot, t_keep = spec.t_total, spec.n_kept

    b_level = spec.loading_scale * rng.standard_normal((n, j))
    b_vol = spec.loading_scale * rng.standard_normal((n, k))
    if spec.identity_blocks:
        b_level[:j] = np.eye(j)
        if k > 0:
            b_vol[:k] = np.eye(k)
    rho = rng.uniform(spec.rho_range[0], spec.rho_range[1], size=(n, 1))
    nu = rng.integers(spec.nu_range[0], spec.nu_range[1] + 1, size=n).astype(float)

    chol = np.linalg.cholesky(spec.sigma)
    shocks = rng.standard_normal((t_tot, n_fac)) @ chol.T
    factors = np.zeros((t_tot, n_fac))
    prev = np.zeros(n_fac)
    for t in range(t_tot):
        prev = spec.phi @ prev + shocks[t]
        factors[t] = prev

    lam = rng.gamma(shape=nu[:, None] / 2.0, scale=2.0 / nu[:, None], size=(n, t_tot))
    r = np.exp(b_vol @ factors[:, j:].T) / lam
    eps = np.sqrt(r) * rng.standard_normal((n, t_tot))
    v = np.zeros((n, t_tot))
    v[:, 0] = eps[:, 0]
    for t in range(1, t_tot):
        v[:, t] = rho[:, 0] * v[:, t - 1] + eps[:, t]
    x = b_level @ factors[:, :j].T + v

    x = x[:, spec.t_burn:]
    # the generated data is already in model units (unit anchor loadings,
    # no per-series variance intercepts), so the panel carries identity
    # standardization metadata rather than rescaling away the anchors
    panel = Panel(
        data=x,
        tcodes=["none"] * n,
        means=np.zeros(n),
        stds=np.ones(n),
        labels=[f"s{i:03d}" for i in range(n)],
        dates=quarter_labels(t_keep),
    )
    kept = FactorPath(factors[spec.t_burn:].copy(), n_level=j)
    truth = GroundTruth(
        factors=kept,
        b_level=b_level,
        b_vol=b_vol,
        rho=rho,
        nu=nu,
        lam=lam[:, spec.t_burn:].copy(),
        r=np.exp(b_vol @ kept.vol.T) / lam[:, spec.t_burn:],
        )
    return panel, truth


def truth_in_model_units(truth: GroundTruth, panel: Panel) -> tuple[np.ndarray, np.ndarray]:
    """Level factors and loadings rescaled to the standardized, anchored units.

    Standardizing series i divides its loading row by std_i; the identity
    anchor then multiplies factor j and divides loading column j by the
    anchor series' std. Volatility-side quantities are unaffected up to an
    additive constant in the log variance.
    """
    j = truth.b_level.shape[1]
    s_anchor = panel.stds[:j]
    f_star = truth.factors.level / s_anchor
    b_star = truth.b_level * s_anchor / panel.stds[:, None]
    return f_star, b_star
