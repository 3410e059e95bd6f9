"""Grouped loading masks and simulation-based forecast-error variance shares.

The decomposition attributes variance to each orthogonalized factor
innovation by paired-path simulation: for shock j, paths are simulated
sharing every random input except stream j (active vs zeroed), and the
cumulated mean squared path difference over steps 1..h is shock j's
variance contribution. Shares normalize over the factor shocks; the
mixing-scale (heavy-tail) and idiosyncratic channels enter total variance
only and surface as a residual share.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky

from .model import EXPONENT_CLAMP, FactorPath, ParamDraw
from .util import rng_from

GROUP_TAGS = ("AE", "EMDE")
GROUPED_SHOCK_NAMES = ("world-level", "ae-level", "emde-level",
                       "world-vol", "ae-vol", "emde-vol")


@dataclass
class GroupMask:
    """Per-series group tags inducing loading sparsity on (world, AE, EMDE)
    factor columns: the world column is free for every series, each regional
    column only for its own group."""

    groups: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.groups) == 0:
            raise ValueError("empty group list")
        bad = sorted({g for g in self.groups if g not in GROUP_TAGS})
        if bad:
            raise ValueError(f"unknown group tags: {bad}")

    @property
    def n_series(self) -> int:
        return len(self.groups)

    def free_columns(self) -> np.ndarray:
        """Boolean (n_series, 3) mask over (world, AE, EMDE) columns."""
        free = np.zeros((self.n_series, 3), dtype=bool)
        free[:, 0] = True
        tags = np.asarray(self.groups)
        free[:, 1] = tags == "AE"
        free[:, 2] = tags == "EMDE"
        return free


def grouped_free_masks(mask: GroupMask) -> tuple[np.ndarray, np.ndarray]:
    """Free-coordinate masks for level and volatility loadings.

    The first three series anchor the (world, AE, EMDE) level columns with
    identity rows, so series 1 must be AE and series 2 EMDE (series 0 may be
    either: the world column is free for everyone). Same layout for the
    volatility anchors.
    """
    if mask.n_series < 3:
        raise ValueError("grouped model needs at least 3 series")
    if mask.groups[1] != "AE" or mask.groups[2] != "EMDE":
        raise ValueError("anchor series incompatible with group mask: "
                         "series 1 must be AE and series 2 EMDE")
    free = mask.free_columns()
    return free.copy(), free.copy()


def apply_group_mask(draw: ParamDraw, mask: GroupMask) -> ParamDraw:
    """Zero the masked loading entries (idempotent)."""
    if draw.b_level.shape[1] != 3 or draw.b_vol.shape[1] != 3:
        raise ValueError("group mask needs 3 level and 3 volatility columns")
    if draw.b_level.shape[0] != mask.n_series:
        raise ValueError("mask length must match the series count")
    out = draw.copy()
    free = mask.free_columns()
    out.b_level = np.where(free, out.b_level, 0.0)
    out.b_vol = np.where(free, out.b_vol, 0.0)
    return out


def shock_names(n_level: int, n_vol: int) -> tuple[str, ...]:
    if n_level == 3 and n_vol == 3:
        return GROUPED_SHOCK_NAMES
    return tuple([f"level{j}" for j in range(n_level)]
                 + [f"vol{j}" for j in range(n_vol)])


def impact_matrix(params: ParamDraw, ordering: tuple[int, ...] | None = None) -> np.ndarray:
    """Orthogonalized impact matrix M with e_t = M eta_t, eta ~ N(0, I).

    Default ordering is the factor ordering itself, for which M is exactly
    A^{-1} H^{1/2}; an override recomputes the Cholesky factor of the
    innovation covariance under the permuted ordering.
    """
    n = params.a_mat.shape[0]
    if ordering is None:
        return params.omega_chol()
    perm = np.asarray(ordering, dtype=int)
    if sorted(perm.tolist()) != list(range(n)):
        raise ValueError("ordering must be a permutation of the factor indices")
    omega = params.omega()
    lp = cholesky(omega[np.ix_(perm, perm)], lower=True)
    m = np.zeros_like(omega)
    m[perm] = lp
    return m


@dataclass
class FevdRow:
    """Cumulative variance shares for one series: shares[h_pos, shock]."""

    series: int
    horizons: tuple[int, ...]
    shock_names: tuple[str, ...]
    shares: np.ndarray
    residual: np.ndarray


def fevd_shares(
    params: ParamDraw,
    factors: FactorPath,
    series: int,
    horizons: tuple[int, ...] = (1, 4, 8, 16),
    n_sims: int = 2000,
    rng: np.random.Generator | None = None,
    ordering: tuple[int, ...] | None = None,
    n_origins: int = 8,
) -> FevdRow:
    """Paired-path variance shares of the factor innovations for one series,
    averaged over evenly spaced origins; see the module docstring."""
    if rng is None:
        rng = np.random.default_rng(0)
    horizons = tuple(int(h) for h in horizons)
    if min(horizons) < 1:
        raise ValueError("horizons must be positive")
    max_h = max(horizons)
    coef_lags = params.coef_lags()
    intercept = params.intercept()
    n_lag, n_fac, _ = coef_lags.shape
    n_level = params.b_level.shape[1]
    b_lvl = params.b_level[series]
    b_vol = params.b_vol[series]
    rho = params.rho[series]
    lag_v = rho.size
    nu = float(params.nu[series])
    m_impact = impact_matrix(params, ordering)
    n_shock = n_fac
    n_paths = 1 + n_shock

    path = factors.path
    t_len = path.shape[0]
    if t_len < n_lag:
        raise ValueError("factor path shorter than the VAR lag order")
    origins = np.unique(np.linspace(n_lag - 1, t_len - 1, n_origins).astype(int))

    var_shock = np.zeros((len(origins), n_shock, max_h))
    var_total = np.zeros((len(origins), max_h))
    for oi, origin in enumerate(origins):
        lags0 = np.stack([path[origin - l] for l in range(n_lag)])  # (L, n_fac)
        eta = rng.standard_normal((n_sims, max_h, n_fac))
        lam = rng.gamma(shape=nu / 2.0, scale=2.0 / nu, size=(n_sims, max_h))
        z_idio = rng.standard_normal((n_sims, max_h))

        buf = np.broadcast_to(lags0, (n_paths, n_sims, n_lag, n_fac)).copy()
        vbuf = np.zeros((n_paths, n_sims, max(lag_v, 1)))
        sq_diff = np.zeros((n_shock, max_h))
        base = np.zeros((n_sims, max_h))
        for s in range(max_h):
            eta_s = np.broadcast_to(eta[:, s], (n_paths, n_sims, n_fac)).copy()
            for j in range(n_shock):
                eta_s[1 + j, :, j] = 0.0
            e_s = eta_s @ m_impact.T
            mean = intercept + np.einsum("pmln,lnk->pmk",
                                         buf, coef_lags.transpose(0, 2, 1))
            f_new = mean + e_s
            expo = np.clip(f_new[..., n_level:] @ b_vol,
                           -EXPONENT_CLAMP, EXPONENT_CLAMP)
            eps = np.sqrt(np.exp(expo) / lam[None, :, s]) * z_idio[None, :, s]
            v_new = eps
            for l in range(lag_v):
                v_new = v_new + rho[l] * vbuf[:, :, l]
            x = f_new[..., :n_level] @ b_lvl + v_new
            d = x[0][None, :] - x[1:]
            sq_diff[:, s] = np.mean(d * d, axis=1)
            base[:, s] = x[0]
            buf = np.concatenate([f_new[:, :, None, :], buf[:, :, :-1]], axis=2)
            if lag_v:
                vbuf = np.concatenate([v_new[:, :, None], vbuf[:, :, :-1]], axis=2)
        var_shock[oi] = np.cumsum(sq_diff, axis=1)
        var_total[oi] = np.cumsum(np.var(base, axis=0), axis=0)

    var_shock_avg = var_shock.mean(axis=0)  # (n_shock, max_h)
    var_total_avg = var_total.mean(axis=0)
    denom = var_shock_avg.sum(axis=0)
    cols = [h - 1 for h in horizons]
    if np.any(denom[cols] <= 0.0):
        raise ValueError("deterministic system")
    shares = (var_shock_avg / denom).T[cols]  # (n_h, n_shock)
    with np.errstate(divide="ignore", invalid="ignore"):
        resid_full = np.where(var_total_avg > 0.0,
                              1.0 - denom / var_total_avg, 0.0)
    residual = np.clip(resid_full[cols], 0.0, 1.0)
    names = shock_names(n_level, n_fac - n_level)
    return FevdRow(series=series, horizons=horizons, shock_names=names,
                   shares=shares, residual=residual)


@dataclass
class FevdTable:
    """Posterior-median shares, flattened to (series, horizon, shock) rows."""

    rows: list[dict] = field(default_factory=list)

    def to_csv(self, path: str) -> None:
        cols = ["series", "horizon", "shock", "share_median", "residual_median"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(f"{r['series']},{r['horizon']},{r['shock']},"
                         f"{r['share_median']:.17g},{r['residual_median']:.17g}\n")


def fevd_table(
    chain,
    series: list[int],
    labels: list[str] | None = None,
    horizons: tuple[int, ...] = (1, 4, 8, 16),
    n_sims: int = 1000,
    max_draws: int = 50,
    seed: int = 0,
    ordering: tuple[int, ...] | None = None,
) -> FevdTable:
    """Median FEVD shares across a thinned set of posterior draws."""
    n_stored = len(chain.draws)
    if n_stored == 0:
        raise ValueError("chain holds no stored draws")
    stride = max(1, n_stored // max_draws)
    idx = list(range(0, n_stored, stride))
    table = FevdTable()
    for si, s in enumerate(series):
        per_draw = []
        for di in idx:
            rng = rng_from(seed, 3, s, di)
            row = fevd_shares(chain.draws[di], chain.factor_draws[di], s,
                              horizons=horizons, n_sims=n_sims, rng=rng,
                              ordering=ordering)
            per_draw.append((row.shares, row.residual))
        shares_med = np.median(np.stack([p[0] for p in per_draw]), axis=0)
        resid_med = np.median(np.stack([p[1] for p in per_draw]), axis=0)
        name = labels[si] if labels is not None else str(s)
        n_shock = per_draw[0][0].shape[1]
        shock_lbls = shock_names(chain.draws[0].b_level.shape[1],
                                 chain.draws[0].b_vol.shape[1])
        for hi, h in enumerate(horizons):
            for j in range(n_shock):
                table.rows.append({
                    "series": name, "horizon": h, "shock": shock_lbls[j],
                    "share_median": float(shares_med[hi, j]),
                    "residual_median": float(resid_med[hi]),
                })
    return table


def linear_fevd_shares(
    b_level_row: np.ndarray,
    coef_lags: np.ndarray,
    impact: np.ndarray,
    horizons: tuple[int, ...],
) -> np.ndarray:
    """Closed-form cumulative shares for the linear (constant-variance) case.

    The paired-path difference at step s for shock j is the moving-average
    transfer of that single stream, so its variance is sum_{m<s} (b' Psi_m M
    e_j)^2; cumulating over s <= h and normalizing gives the textbook
    decomposition in the same cumulative convention as fevd_shares.
    """
    n_lag, n_fac, _ = coef_lags.shape
    max_h = max(horizons)
    psi = [np.eye(n_fac)]
    for s in range(1, max_h):
        acc = np.zeros((n_fac, n_fac))
        for l in range(min(s, n_lag)):
            acc += coef_lags[l] @ psi[s - 1 - l]
        psi.append(acc)
    n_level = b_level_row.size
    b_full = np.zeros(n_fac)
    b_full[:n_level] = b_level_row
    step_var = np.zeros((n_fac, max_h))  # per-step diff variance, cumulated below
    for s in range(1, max_h + 1):
        for j in range(n_fac):
            tot = 0.0
            for m in range(s):
                tot += float(b_full @ psi[m] @ impact[:, j]) ** 2
            step_var[j, s - 1] = tot
    cum = np.cumsum(step_var, axis=1)
    cols = [h - 1 for h in horizons]
    denom = cum.sum(axis=0)
    return (cum / denom).T[cols]
