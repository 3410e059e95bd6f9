"""Benchmark dynamic factor model: Gaussian factor VAR, series-level random-walk
log volatilities, no volatility factors and no mixing scales.

Shares the level-loading, AR, and factor-VAR blocks with the main sampler;
factors are drawn exactly by a simulation smoother on the companion state
space, and each series' log variance path is updated by single-site
random-walk Metropolis sweeps (even/odd sites alternately, which are
conditionally independent given their neighbors).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gibbs import (_StepAdapter, draw_a_mat, draw_h_diag, draw_idio_ar,
                    draw_level_loadings, draw_var_coeffs, qd_factors_per_series)
from .model import FactorPath, ModelConfig, Panel, ParamDraw, quasi_difference
from .priors import PriorSet, build_priorset, init_idio_logvol, var_design
from .statespace import build_qd_statespace, simulation_smoother
from .util import inv_gamma_scale_dof

Q_PRIOR_SCALE = 0.01
Q_PRIOR_DOF = 3.0
LOGVOL_STEP0 = 0.2
EPS_SQ_FLOOR = 1e-12


@dataclass
class BenchmarkDraw:
    """One stored draw of the benchmark model's parameters and volatility paths."""

    b_level: np.ndarray  # (N, J)
    rho: np.ndarray  # (N, L_v)
    gamma: np.ndarray  # (J*L_F + 1, J)
    a_mat: np.ndarray  # (J, J)
    h_diag: np.ndarray  # (J,)
    log_omega: np.ndarray  # (N, T)
    q: np.ndarray  # (N,) random-walk increment variances

    def copy(self) -> "BenchmarkDraw":
        return BenchmarkDraw(self.b_level.copy(), self.rho.copy(), self.gamma.copy(),
                             self.a_mat.copy(), self.h_diag.copy(),
                             self.log_omega.copy(), self.q.copy())


@dataclass
class BenchmarkChain:
    config: ModelConfig
    draws: list[BenchmarkDraw]
    factor_draws: list[FactorPath]
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_stored(self) -> int:
        return len(self.draws)


def _logvol_site_sweep(
    log_eps_sq: np.ndarray,
    has_lik: np.ndarray,
    paths: np.ndarray,
    q: np.ndarray,
    step: np.ndarray,
    rng: np.random.Generator,
    parity: int,
) -> np.ndarray:
    """Metropolis update of all sites of one parity across all series at once.

    paths is (N, T). Sites of equal parity are conditionally independent given
    the opposite parity, so they accept or reject jointly. The initial state
    is diffuse: site 0 has only a forward neighbor term. Returns acceptance
    indicators with the shape of the updated sites.
    """
    n, t = paths.shape
    idx = np.arange(parity, t, 2)
    cur = paths[:, idx]
    prop = cur + step[:, None] * rng.standard_normal(cur.shape)

    def site_logdens(x: np.ndarray) -> np.ndarray:
        out = np.where(has_lik[idx][None, :],
                       -0.5 * (x + np.exp(log_eps_sq[:, idx] - x)), 0.0)
        left = idx - 1
        ok_l = left >= 0
        out[:, ok_l] -= 0.5 * (x[:, ok_l] - paths[:, left[ok_l]]) ** 2 / q[:, None]
        right = idx + 1
        ok_r = right < t
        out[:, ok_r] -= 0.5 * (paths[:, right[ok_r]] - x[:, ok_r]) ** 2 / q[:, None]
        return out

    accept = np.log(rng.random(cur.shape)) < site_logdens(prop) - site_logdens(cur)
    paths[:, idx] = np.where(accept, prop, cur)
    return accept


def draw_logvol_rw(
    log_eps_sq: np.ndarray,
    path: np.ndarray,
    q: float,
    step: float,
    rng: np.random.Generator,
    n_presample: int = 0,
) -> tuple[np.ndarray, float]:
    """One full even/odd sweep of a single series' log variance path.

    log_eps_sq has one entry per period with a likelihood term; the first
    n_presample sites carry random-walk links only. Returns the new path and
    the acceptance rate of the sweep.
    """
    t = path.size
    ls = np.zeros(t)
    ls[n_presample:] = log_eps_sq
    has_lik = np.zeros(t, dtype=bool)
    has_lik[n_presample:] = True
    paths = path[None, :].copy()
    acc = []
    for parity in (0, 1):
        acc.append(_logvol_site_sweep(ls[None, :], has_lik, paths, np.array([q]),
                                      np.array([step]), rng, parity))
    rate = float(np.mean(np.concatenate([a.ravel() for a in acc])))
    return paths[0], rate


def draw_rw_variance(log_omega: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Conjugate inverse-gamma draw of each series' random-walk increment variance."""
    diffs = np.diff(log_omega, axis=1)
    scale = Q_PRIOR_SCALE + np.sum(diffs * diffs, axis=1)
    dof = np.full(log_omega.shape[0], Q_PRIOR_DOF + diffs.shape[1])
    return inv_gamma_scale_dof(rng, scale, dof)


def estimate_benchmark(
    panel: Panel,
    config: ModelConfig,
    rng: np.random.Generator | None = None,
    progress: bool = False,
) -> BenchmarkChain:
    """Posterior sampler for the benchmark model.

    Uses the same priors and shared blocks as the main model wherever the
    two coincide; volatility enters only through per-series random-walk log
    variances with conjugate increment-variance updates.
    """
    if panel.n_series != config.n_series:
        raise ValueError("panel does not match config dimensions")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n, t = panel.data.shape
    j = config.n_level
    lag_v = config.lag_idio
    s = config.presample

    level_cfg = ModelConfig(**{**config.to_dict(), "n_vol": 0})
    priors, init, factors = build_priorset(panel, level_cfg)
    params = init
    gamma = params.gamma
    a_mat = params.a_mat
    h_diag = params.h_diag
    b_level = params.b_level
    rho = params.rho
    resid0 = panel.data - b_level @ factors.level.T
    log_omega = init_idio_logvol(resid0)
    q = np.full(n, 0.05)

    adapter = _StepAdapter(np.full(n, LOGVOL_STEP0))
    accept_post = 0.0
    n_post = 0
    gamma_fail = 0
    draws: list[BenchmarkDraw] = []
    factor_draws: list[FactorPath] = []

    for it in range(config.n_draws):
        in_burn = it < config.n_burn

        y_var, x_var = var_design(factors.path, config.lag_factor, s)
        e = y_var - x_var @ gamma
        u = e @ a_mat.T
        h_diag = draw_h_diag(u, priors.h_scale, priors.h_dof, rng)
        a_mat = draw_a_mat(e, h_diag, priors.a_var, rng)
        gamma, ok = draw_var_coeffs(
            factors.path, config.lag_factor, s, priors.dummy_y, priors.dummy_x,
            a_mat, h_diag, rng, prev=gamma)
        gamma_fail += not ok

        r = np.exp(log_omega[:, s:])
        x_qd = quasi_difference(panel.data, rho)[:, s - lag_v:]
        f_qd = qd_factors_per_series(factors.level, rho, s)
        b_level = draw_level_loadings(
            x_qd, f_qd, r, priors.bload_mean, priors.bload_var, j, rng)

        v = panel.data - b_level @ factors.level.T
        rho, _ = draw_idio_ar(v, r, lag_v, s, priors.rho_var, rng, rho)

        eps = quasi_difference(v, rho)[:, s - lag_v:]
        ls = np.zeros((n, t))
        ls[:, s:] = np.log(eps * eps + EPS_SQ_FLOOR)
        has_lik = np.zeros(t, dtype=bool)
        has_lik[s:] = True
        acc_parts = []
        for parity in (0, 1):
            acc_parts.append(_logvol_site_sweep(ls, has_lik, log_omega, q,
                                                adapter.step, rng, parity))
        acc_rate = np.concatenate([a.mean(axis=1, keepdims=True) for a in acc_parts],
                                  axis=1).mean(axis=1)
        if in_burn:
            adapter.record(acc_rate, np.ones(n))
            adapter.maybe_adapt()
        else:
            accept_post += float(acc_rate.mean())

        q = draw_rw_variance(log_omega, rng)

        ss = build_qd_statespace(
            b_level, rho, _coef_lags(gamma, j, config.lag_factor),
            gamma[-1, :], _omega_from(a_mat, h_diag))
        states = simulation_smoother(ss, x_qd.T, np.exp(log_omega[:, s:]).T,
                                     np.zeros(ss.dim), rng)
        path = np.zeros((t, j))
        path[s:] = states[:, :j]
        factors = FactorPath(path, n_level=j)

        if not in_burn:
            n_post += 1
            if (it - config.n_burn) % config.thin == 0:
                draws.append(BenchmarkDraw(b_level.copy(), rho.copy(), gamma.copy(),
                                           a_mat.copy(), h_diag.copy(),
                                           log_omega.copy(), q.copy()))
                factor_draws.append(factors.copy())
        if progress and (it + 1) % 100 == 0:
            print(f"benchmark iteration {it + 1}/{config.n_draws}", flush=True)

    diagnostics = {
        "accept_logvol": accept_post / max(n_post, 1),
        "step_logvol": adapter.step,
        "gamma_retry_fail": int(gamma_fail),
    }
    return BenchmarkChain(config=config, draws=draws, factor_draws=factor_draws,
                          diagnostics=diagnostics)


def _coef_lags(gamma: np.ndarray, n_fac: int, lags: int) -> np.ndarray:
    return np.stack([gamma[l * n_fac:(l + 1) * n_fac, :].T for l in range(lags)])


def _omega_from(a_mat: np.ndarray, h_diag: np.ndarray) -> np.ndarray:
    a_inv = np.linalg.inv(a_mat)
    return a_inv @ np.diag(h_diag) @ a_inv.T
