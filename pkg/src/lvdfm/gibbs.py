"""Gibbs sampler blocks and the full MCMC driver.

Each iteration cycles through: factor-VAR variance and covariance terms,
VAR coefficients (with Minnesota dummies appended to the data), level
loadings, idiosyncratic AR coefficients, volatility loadings (random-walk
Metropolis), mixing scales, Student-t degrees of freedom, and finally the
joint factor path by particle Gibbs with ancestor sampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaln

from .model import EXPONENT_CLAMP, FactorPath, ModelConfig, Panel, ParamDraw, quasi_difference
from .pgas import pgas_draw
from .priors import PriorSet, build_priorset, var_design
from .util import companion_matrix, inv_gamma_scale_dof, spectral_radius

ADAPT_WINDOW = 50
ADAPT_LOW, ADAPT_HIGH = 0.20, 0.40
MAX_STATIONARY_RETRY = 100


@dataclass
class Chain:
    """Stored posterior draws plus sampler diagnostics."""

    config: ModelConfig
    draws: list[ParamDraw]
    factor_draws: list[FactorPath]
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_stored(self) -> int:
        return len(self.draws)


def draw_h_diag(orth_resid: np.ndarray, h_scale: float, h_dof: float,
                rng: np.random.Generator) -> np.ndarray:
    """Inverse-gamma draws for the orthogonalized innovation variances."""
    t_len = orth_resid.shape[0]
    scale = h_scale + np.sum(orth_resid * orth_resid, axis=0)
    return inv_gamma_scale_dof(rng, scale, np.full(scale.shape, h_dof + t_len))


def draw_a_mat(var_resid: np.ndarray, h_diag: np.ndarray, a_var: float,
               rng: np.random.Generator) -> np.ndarray:
    """Unit lower-triangular orthogonalization coefficients, one regression per row."""
    n = var_resid.shape[1]
    a_mat = np.eye(n)
    for k in range(1, n):
        x = -var_resid[:, :k]
        y = var_resid[:, k]
        prec = np.eye(k) / a_var + (x.T @ x) / h_diag[k]
        try:
            cf = cholesky(prec, lower=True)
        except np.linalg.LinAlgError:
            raise ValueError("collinear residuals")
        mean = cho_solve((cf, True), x.T @ y / h_diag[k])
        a_mat[k, :k] = mean + solve_triangular(cf.T, rng.standard_normal(k), lower=False)
    return a_mat


def draw_var_coeffs(
    path: np.ndarray,
    lags: int,
    start: int,
    dummy_y: np.ndarray,
    dummy_x: np.ndarray,
    a_mat: np.ndarray,
    h_diag: np.ndarray,
    rng: np.random.Generator,
    prev: np.ndarray | None = None,
    max_retry: int = MAX_STATIONARY_RETRY,
) -> tuple[np.ndarray, bool]:
    """Draw VAR coefficients equation by equation given the orthogonalization.

    The triangular structure makes equation k conditionally a regression of
    y_k + sum_{j<k} a_kj (y_j - X g_j) on the shared regressors with error
    variance h_k, using the already-drawn columns g_j. Dummy observations are
    appended to the data rows. Draws whose companion matrix has spectral
    radius >= 1 are redrawn; after max_retry failures the previous
    coefficients are kept and the flag returns False.
    """
    y, x = var_design(path, lags, start)
    y_aug = np.vstack([y, dummy_y])
    x_aug = np.vstack([x, dummy_x])
    n = y.shape[1]
    gram = x_aug.T @ x_aug
    cf = cholesky(gram, lower=True)
    for _ in range(max_retry):
        gamma = np.empty((x_aug.shape[1], n))
        resid_cols = np.empty_like(y_aug)
        for k in range(n):
            y_k = y_aug[:, k].copy()
            for j in range(k):
                y_k += a_mat[k, j] * resid_cols[:, j]
            mean = cho_solve((cf, True), x_aug.T @ y_k)
            gamma[:, k] = mean + np.sqrt(h_diag[k]) * solve_triangular(
                cf.T, rng.standard_normal(gram.shape[0]), lower=False)
            resid_cols[:, k] = y_aug[:, k] - x_aug @ gamma[:, k]
        comp = companion_matrix(np.stack([gamma[l * n:(l + 1) * n, :].T for l in range(lags)]))
        if spectral_radius(comp) < 1.0:
            return gamma, True
    if prev is None:
        raise ValueError("no stationary VAR draw found")
    return prev.copy(), False


def _posterior_normal_draws(prec: np.ndarray, linear: np.ndarray,
                            rng: np.random.Generator) -> np.ndarray:
    """Batched draws from N(prec^-1 linear, prec^-1) for stacked (N, d, d) precisions."""
    cf = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, linear[..., None])[..., 0]
    z = rng.standard_normal(linear.shape)
    step = np.linalg.solve(np.swapaxes(cf, -1, -2), z[..., None])[..., 0]
    return mean + step


def draw_level_loadings(
    x_qd: np.ndarray,
    f_qd: np.ndarray,
    r: np.ndarray,
    prior_mean: np.ndarray,
    prior_var: float,
    n_anchor: int,
    rng: np.random.Generator,
    free_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Conjugate per-series loading draws under heteroskedastic GLS weights.

    x_qd and r are (N, T'), f_qd is (N, T', J) holding the level factors
    quasi-differenced with each series' own AR coefficients. The first
    n_anchor rows are pinned to the identity block. free_mask marks estimated
    coordinates; masked ones stay at zero.
    """
    n, _, j = f_qd.shape
    fw = f_qd / r[:, :, None]
    prec = np.einsum("itj,itl->ijl", fw, f_qd)
    prec += np.eye(j) / prior_var
    linear = prior_mean / prior_var + np.einsum("itj,it->ij", fw, x_qd)
    if free_mask is None:
        out = _posterior_normal_draws(prec, linear, rng)
    else:
        out = np.zeros((n, j))
        for i in range(n):
            idx = np.flatnonzero(free_mask[i])
            if idx.size == 0:
                continue
            sub = prec[i][np.ix_(idx, idx)]
            cf = cholesky(sub, lower=True)
            mean = cho_solve((cf, True), linear[i][idx])
            out[i, idx] = mean + solve_triangular(cf.T, rng.standard_normal(idx.size), lower=False)
    out[:n_anchor] = np.eye(n_anchor, j)
    return out


def draw_idio_ar(
    v: np.ndarray,
    r: np.ndarray,
    lag_idio: int,
    start: int,
    prior_var: float,
    rng: np.random.Generator,
    prev: np.ndarray,
    max_retry: int = MAX_STATIONARY_RETRY,
) -> tuple[np.ndarray, int]:
    """AR coefficient draws for every idiosyncratic series, GLS-weighted by 1/r.

    Nonstationary draws (companion radius >= 1) are redrawn per series; after
    max_retry the previous values are kept. Returns the draws and the number
    of series that hit the retry cap.
    """
    n, t = v.shape
    if lag_idio == 0:
        return np.zeros((n, 0)), 0
    vlags = np.empty((n, t - start, lag_idio))
    for l in range(1, lag_idio + 1):
        vlags[:, :, l - 1] = v[:, start - l: t - l]
    w = vlags / r[:, :, None]
    prec = np.einsum("itj,itl->ijl", w, vlags) + np.eye(lag_idio) / prior_var
    linear = np.einsum("itj,it->ij", w, v[:, start:])
    out = prev.copy()
    pending = np.arange(n)
    for _ in range(max_retry):
        draws = _posterior_normal_draws(prec[pending], linear[pending], rng)
        radii = np.array([spectral_radius(companion_matrix(d.reshape(-1, 1, 1))) for d in draws])
        ok = radii < 1.0
        out[pending[ok]] = draws[ok]
        pending = pending[~ok]
        if pending.size == 0:
            break
    return out, int(pending.size)


def volload_log_targets(
    b_rows: np.ndarray,
    volfac: np.ndarray,
    eps_sq_lam: np.ndarray,
    prior_mean: np.ndarray,
    prior_var: float,
) -> np.ndarray:
    """Log conditional of the volatility loadings per series, up to constants.

    eps_sq_lam holds eps_t^2 * lam_t; the innovation variance at t is
    exp(b . F_t)/lam_t. Rows whose exponent leaves the stable range get -inf.
    """
    expo = b_rows @ volfac.T
    bad = np.any(np.abs(expo) > EXPONENT_CLAMP, axis=-1)
    expo = np.clip(expo, -EXPONENT_CLAMP, EXPONENT_CLAMP)
    ll = -0.5 * np.sum(expo + eps_sq_lam * np.exp(-expo), axis=-1)
    dev = b_rows - prior_mean
    out = ll - 0.5 * np.sum(dev * dev, axis=-1) / prior_var
    return np.where(bad, -np.inf, out)


def draw_vol_loadings(
    b_cur: np.ndarray,
    eps: np.ndarray,
    volfac: np.ndarray,
    lam: np.ndarray,
    prior_mean: np.ndarray,
    prior_var: float,
    n_anchor: int,
    step: np.ndarray,
    rng: np.random.Generator,
    free_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random-walk Metropolis update of the volatility loadings, series by series.

    eps and lam are (N, T') aligned with volfac (T', k). The first n_anchor
    rows are pinned to the identity block and never proposed. Returns the new
    loadings, acceptance indicators, and the mask of series actually proposed
    (for acceptance-rate bookkeeping).
    """
    n, k = b_cur.shape
    eps_sq_lam = eps * eps * lam
    z = rng.standard_normal((n, k))
    if free_mask is not None:
        z = z * free_mask
    prop = b_cur + step[:, None] * z
    lt_cur = volload_log_targets(b_cur, volfac, eps_sq_lam, prior_mean, prior_var)
    lt_prop = volload_log_targets(prop, volfac, eps_sq_lam, prior_mean, prior_var)
    with np.errstate(invalid="ignore"):
        accept = np.log(rng.random(n)) < lt_prop - lt_cur
    proposed = np.ones(n, dtype=bool)
    proposed[:n_anchor] = False
    if free_mask is not None:
        proposed &= free_mask.any(axis=1)
    accept &= proposed
    out = np.where(accept[:, None], prop, b_cur)
    out[:n_anchor] = np.eye(n_anchor, k)
    return out, accept, proposed


def draw_mixing_scales(
    eps: np.ndarray,
    expo: np.ndarray,
    nu: np.ndarray,
    n_presample: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Gamma mixing-scale draws: conditional posteriors in-sample, prior in presample.

    The posterior for lam_it is Gamma with mean (nu+1)/(eps^2/r + nu) and
    degrees of freedom nu+1, where r = exp(expo); equivalently shape (nu+1)/2
    and rate (eps^2 exp(-expo) + nu)/2.
    """
    n = eps.shape[0]
    shape_post = (nu[:, None] + 1.0) / 2.0
    rate_post = (eps * eps * np.exp(-expo) + nu[:, None]) / 2.0
    lam_post = rng.gamma(np.broadcast_to(shape_post, eps.shape)) / rate_post
    if n_presample > 0:
        shape_pre = np.broadcast_to(nu[:, None] / 2.0, (n, n_presample))
        lam_pre = rng.gamma(shape_pre) / (nu[:, None] / 2.0)
        return np.concatenate([lam_pre, lam_post], axis=1)
    return lam_post


def nu_log_target(nu: float, t_len: int, sum_stat: float, nu0: float) -> float:
    """Log kernel of the degrees of freedom given mixing scales, on the log-nu scale.

    sum_stat is sum_t(lam_t - log lam_t); the exponential prior has mean nu0.
    Includes the log-nu Jacobian for random-walk proposals in log nu.
    """
    if nu <= 0:
        return -np.inf
    half = nu / 2.0
    return (t_len * half * np.log(half) - t_len * gammaln(half)
            - nu * (1.0 / nu0 + 0.5 * sum_stat) + np.log(nu))


def draw_nu(
    lam_row: np.ndarray, nu_cur: float, nu0: float, step: float, rng: np.random.Generator
) -> tuple[float, bool]:
    """Log-scale random-walk Metropolis update of one series' degrees of freedom."""
    t_len = lam_row.size
    sum_stat = float(np.sum(lam_row - np.log(lam_row)))
    prop = nu_cur * np.exp(step * rng.standard_normal())
    delta = nu_log_target(prop, t_len, sum_stat, nu0) - nu_log_target(nu_cur, t_len, sum_stat, nu0)
    if np.log(rng.random()) < delta:
        return float(prop), True
    return float(nu_cur), False


def qd_factors_per_series(f_level: np.ndarray, rho: np.ndarray, start: int) -> np.ndarray:
    """Level factors quasi-differenced with each series' AR coefficients: (N, T-start, J)."""
    t = f_level.shape[0]
    n, lag_v = rho.shape
    out = np.repeat(f_level[None, start:], n, axis=0)
    for l in range(1, lag_v + 1):
        out -= rho[:, l - 1, None, None] * f_level[None, start - l: t - l]
    return out


class _StepAdapter:
    """Per-series random-walk step adaptation during burn-in."""

    def __init__(self, step: np.ndarray):
        self.step = step.astype(float).copy()
        self.accepts = np.zeros(step.shape[0])
        self.proposals = np.zeros(step.shape[0])

    def record(self, accepted: np.ndarray, proposed: np.ndarray) -> None:
        self.accepts += accepted
        self.proposals += proposed

    def maybe_adapt(self) -> None:
        if not np.any(self.proposals >= ADAPT_WINDOW):
            return
        rate = np.divide(self.accepts, self.proposals,
                         out=np.full_like(self.accepts, 0.3), where=self.proposals > 0)
        self.step *= np.where(rate > ADAPT_HIGH, 1.1, np.where(rate < ADAPT_LOW, 0.9, 1.0))
        self.accepts[:] = 0.0
        self.proposals[:] = 0.0


def run_chain(
    panel: Panel,
    config: ModelConfig,
    priors: PriorSet | None = None,
    init: ParamDraw | None = None,
    init_factors: FactorPath | None = None,
    free_mask_level: np.ndarray | None = None,
    free_mask_vol: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    progress: bool = False,
) -> Chain:
    """Run the full posterior sampler and return stored post-burn-in draws.

    Draw storage starts after n_burn iterations and keeps every thin-th
    iteration. Metropolis step sizes adapt in blocks of 50 proposals during
    burn-in only. free_mask_* restrict which loading coordinates are
    estimated (True = free); anchor rows are always pinned to the identity.
    """
    if panel.n_series != config.n_series:
        raise ValueError("panel does not match config dimensions")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    if priors is None or init is None or init_factors is None:
        priors, init, init_factors = build_priorset(panel, config)

    n, t = panel.data.shape
    j, k = config.n_level, config.n_vol
    s = config.presample
    lag_v = config.lag_idio
    params = init.copy()
    factors = init_factors.copy()

    vol_adapter = _StepAdapter(np.full(n, config.mh_step_volload))
    nu_adapter = _StepAdapter(np.full(n, config.mh_step_nu))
    accept_vol_post = np.zeros(n)
    accept_nu_post = np.zeros(n)
    n_post_iters = 0
    gamma_fail = 0
    rho_fail = 0

    draws: list[ParamDraw] = []
    factor_draws: list[FactorPath] = []

    for it in range(config.n_draws):
        in_burn = it < config.n_burn

        y_var, x_var = var_design(factors.path, config.lag_factor, s)
        e = y_var - x_var @ params.gamma
        u = e @ params.a_mat.T
        params.h_diag = draw_h_diag(u, priors.h_scale, priors.h_dof, rng)
        params.a_mat = draw_a_mat(e, params.h_diag, priors.a_var, rng)
        params.gamma, ok = draw_var_coeffs(
            factors.path, config.lag_factor, s, priors.dummy_y, priors.dummy_x,
            params.a_mat, params.h_diag, rng, prev=params.gamma)
        gamma_fail += not ok

        volfac = factors.vol[s:]
        expo = np.clip(params.b_vol @ volfac.T, -EXPONENT_CLAMP, EXPONENT_CLAMP)
        r = np.exp(expo) / params.lam[:, s:]
        x_qd = quasi_difference(panel.data, params.rho)[:, s - lag_v:]
        f_qd = qd_factors_per_series(factors.level, params.rho, s)
        params.b_level = draw_level_loadings(
            x_qd, f_qd, r, priors.bload_mean, priors.bload_var, j, rng, free_mask_level)

        v = panel.data - params.b_level @ factors.level.T
        params.rho, nf = draw_idio_ar(v, r, lag_v, s, priors.rho_var, rng, params.rho)
        rho_fail += nf

        eps = quasi_difference(v, params.rho)[:, s - lag_v:]
        if k > 0:
            params.b_vol, acc, proposed = draw_vol_loadings(
                params.b_vol, eps, volfac, params.lam[:, s:], priors.volload_mean,
                priors.volload_var, k, vol_adapter.step, rng, free_mask_vol)
            if in_burn:
                vol_adapter.record(acc, proposed)
                vol_adapter.maybe_adapt()
            else:
                accept_vol_post += acc

        expo = np.clip(params.b_vol @ volfac.T, -EXPONENT_CLAMP, EXPONENT_CLAMP)
        params.lam = draw_mixing_scales(eps, expo, params.nu, s, rng)

        nu_acc = np.zeros(n, dtype=bool)
        for i in range(n):
            params.nu[i], nu_acc[i] = draw_nu(
                params.lam[i], params.nu[i], priors.nu0, nu_adapter.step[i], rng)
        if in_burn:
            nu_adapter.record(nu_acc, np.ones(n))
            nu_adapter.maybe_adapt()
        else:
            accept_nu_post += nu_acc

        factors = pgas_draw(
            panel.data, params, factors, config.n_particles, rng,
            resample_ess=config.resample_ess)

        if not in_burn:
            n_post_iters += 1
            if (it - config.n_burn) % config.thin == 0:
                stored = params.copy()
                stored.validate()
                draws.append(stored)
                factor_draws.append(factors.copy())
        if progress and (it + 1) % 100 == 0:
            print(f"iteration {it + 1}/{config.n_draws}", flush=True)

    diagnostics = {
        "accept_volload": accept_vol_post / max(n_post_iters, 1),
        "accept_nu": accept_nu_post / max(n_post_iters, 1),
        "step_volload": vol_adapter.step,
        "step_nu": nu_adapter.step,
        "gamma_retry_fail": int(gamma_fail),
        "rho_retry_fail": int(rho_fail),
    }
    return Chain(config=config, draws=draws, factor_draws=factor_draws, diagnostics=diagnostics)
