"""Particle Gibbs with ancestor sampling for the joint factor path.

Conditional sequential Monte Carlo with the VAR transition as proposal,
multinomial resampling, and the last particle pinned to the reference
trajectory. Because the transition depends on several lags, ancestor weights
multiply the filtering weight by the transition densities of the next
lag_factor reference states given each particle's history spliced with the
already-pinned future reference values.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .model import EXPONENT_CLAMP, FactorPath, ParamDraw, quasi_difference


class ParticleDegeneracyError(RuntimeError):
    """All particle weights underflowed to zero at some time step."""


def _categorical(logw: np.ndarray, u: float) -> int:
    w = np.exp(logw - np.max(logw))
    cum = np.cumsum(w)
    return int(min(np.searchsorted(cum, u * cum[-1], side="right"), logw.size - 1))


def ancestor_logweights(
    log_weights: np.ndarray,
    histories: np.ndarray,
    reference_future: np.ndarray,
    coef_lags: np.ndarray,
    intercept: np.ndarray,
    omega_chol: np.ndarray,
) -> np.ndarray:
    """Unnormalized log ancestor weights for the reference trajectory.

    histories is (P, L, n) with histories[:, l] the particle state l+1 steps
    back; reference_future holds the next m <= lag_factor pinned reference
    states. Each term j scores reference_future[j] under the VAR transition
    whose lags splice already-pinned reference values (for lags <= j) with
    the particle's own history (for lags > j). Additive constants shared by
    all particles are dropped.
    """
    p, _, n = histories.shape
    lag_f = coef_lags.shape[0]
    m = min(reference_future.shape[0], lag_f)
    out = log_weights.astype(float).copy()
    for j in range(m):
        mean_common = intercept.copy()
        for lag in range(1, min(j, lag_f) + 1):
            mean_common += coef_lags[lag - 1] @ reference_future[j - lag]
        n_hist = lag_f - j
        if n_hist > 0:
            wj = np.concatenate([coef_lags[j + lag] for lag in range(n_hist)], axis=1)
            part = histories[:, :n_hist].reshape(p, n_hist * n) @ wj.T
        else:
            part = np.zeros((p, n))
        resid = reference_future[j][None, :] - mean_common[None, :] - part
        half = solve_triangular(omega_chol, resid.T, lower=True)
        out -= 0.5 * np.sum(half * half, axis=0)
    return out


def pgas_draw(
    data: np.ndarray,
    params: ParamDraw,
    reference: FactorPath,
    n_particles: int,
    rng: np.random.Generator,
    resample_ess: float | None = None,
) -> FactorPath:
    """One conditional SMC sweep; returns a new joint factor trajectory.

    The proposal is the factor VAR itself, so particle weights are the
    observation densities of the quasi-differenced data. Presample factors
    stay pinned at zero. With resample_ess set, multinomial resampling (and
    the ancestor draw) happens only when the effective sample size falls
    below that fraction of n_particles; by default it happens every step.
    """
    n_ser, t_len = data.shape
    j, k = params.n_level, params.n_vol
    n_fac = j + k
    lag_f = params.lag_factor
    lag_v = params.rho.shape[1]
    s = max(lag_f, lag_v)
    t_eff = t_len - s
    if t_eff < 1:
        raise ValueError("series too short")
    p = n_particles

    ref = reference.path
    x_qd = quasi_difference(data, params.rho)[:, s - lag_v:]
    coef_w = params.gamma[:-1].T
    coef_lags = params.coef_lags()
    intercept = params.intercept()
    om_chol = params.omega_chol()
    b_level = params.b_level
    b_vol = params.b_vol
    rho = params.rho
    loglam = np.log(params.lam)
    buf_len = max(lag_f, lag_v, 1)

    def obs_logdens(new: np.ndarray, buf: np.ndarray, t: int) -> np.ndarray:
        mean = new[:, :j] @ b_level.T
        for l in range(1, lag_v + 1):
            mean -= (buf[:, l - 1, :j] @ b_level.T) * rho[:, l - 1][None, :]
        resid = x_qd[:, t - s][None, :] - mean
        if k > 0:
            expo = new[:, j:] @ b_vol.T
            bad = np.any(np.abs(expo) > EXPONENT_CLAMP, axis=1)
            expo = np.clip(expo, -EXPONENT_CLAMP, EXPONENT_CLAMP)
        else:
            expo = np.zeros((new.shape[0], n_ser))
            bad = np.zeros(new.shape[0], dtype=bool)
        lam_t = params.lam[:, t]
        quad = resid * resid * lam_t[None, :] * np.exp(-expo)
        ll = -0.5 * (n_ser * np.log(2.0 * np.pi)
                     + np.sum(expo - loglam[:, t][None, :] + quad, axis=1))
        ll[bad] = -np.inf
        return ll

    particles = np.empty((t_eff, p, n_fac))
    ancestry = np.zeros((t_eff, p), dtype=np.int64)
    buf = np.zeros((p, buf_len, n_fac))
    logw = np.zeros(p)

    for t in range(s, t_len):
        step = t - s
        if step > 0:
            shifted = np.max(logw)
            w = np.exp(logw - shifted)
            wsum = w.sum()
            ess = wsum * wsum / np.sum(w * w)
            do_resample = resample_ess is None or ess < resample_ess * p
            if do_resample:
                cum = np.cumsum(w / wsum)
                idx = np.minimum(np.searchsorted(cum, rng.random(p - 1), side="right"), p - 1)
                anc_w = ancestor_logweights(
                    logw, buf, ref[t: min(t + lag_f, t_len)], coef_lags, intercept, om_chol)
                ref_idx = _categorical(anc_w, rng.random())
                anc = np.concatenate([idx, [ref_idx]])
                buf = buf[anc]
                base = np.zeros(p)
            else:
                anc = np.arange(p)
                base = logw
            ancestry[step] = anc
        else:
            base = np.zeros(p)

        pred = buf[:, :lag_f].reshape(p, lag_f * n_fac) @ coef_w.T + intercept
        new = pred + rng.standard_normal((p, n_fac)) @ om_chol.T
        new[p - 1] = ref[t]
        ll = obs_logdens(new, buf, t)
        logw = base + ll
        if not np.any(np.isfinite(logw)):
            raise ParticleDegeneracyError(f"particle degeneracy at t={t}")
        particles[step] = new
        buf = np.concatenate([new[:, None, :], buf[:, :-1]], axis=1)

    idx = _categorical(logw, rng.random())
    path_tail = np.empty((t_eff, n_fac))
    for step in range(t_eff - 1, -1, -1):
        path_tail[step] = particles[step, idx]
        idx = ancestry[step, idx]
    out = np.zeros((t_len, n_fac))
    out[s:] = path_tail
    return FactorPath(out, n_level=j)
