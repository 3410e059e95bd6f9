"""Forecast scoring: RMSE, sample CRPS, threshold-weighted CRPS, equal-accuracy
tests, and an autoregressive quantile-regression benchmark.

CRPS uses the O(M log M) sorted form of the empirical-distribution score.
Threshold-weighted variants integrate the Brier-type integrand exactly over
the weighted region, since the empirical CDF is piecewise constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .forecast import ForecastRun, cumulate_path
from .model import Panel


def crps_sample(draws: np.ndarray, y: float) -> float:
    """Empirical CRPS: mean |x - y| minus half the mean absolute draw difference."""
    draws = np.asarray(draws, dtype=float).ravel()
    m = draws.size
    if m < 2:
        raise ValueError("need at least two draws")
    x = np.sort(draws)
    term1 = float(np.mean(np.abs(x - y)))
    coef = 2.0 * np.arange(1, m + 1) - m - 1
    term2 = float(coef @ x) / (m * m)
    return term1 - term2


def twcrps_sample(draws: np.ndarray, y: float,
                  lo: float = -np.inf, hi: float = np.inf) -> float:
    """CRPS restricted to the window [lo, hi]: integral of (F_M(z) - 1{y<=z})^2.

    The empirical CDF is a step function, so the integral is summed exactly
    over the segments between sorted draws, the outcome, and the window
    endpoints. Windows outside the support integrate to zero.
    """
    draws = np.asarray(draws, dtype=float).ravel()
    if draws.size < 2:
        raise ValueError("need at least two draws")
    if hi <= lo:
        raise ValueError("empty weight window")
    x = np.sort(draws)
    support_lo = min(x[0], y)
    support_hi = max(x[-1], y)
    a = max(lo, support_lo)
    b = min(hi, support_hi)
    if b <= a:
        return 0.0
    inner = np.concatenate([x, [y]])
    inner = np.sort(inner[(inner > a) & (inner < b)])
    grid = np.concatenate([[a], inner, [b]])
    mids = 0.5 * (grid[1:] + grid[:-1])
    widths = np.diff(grid)
    cdf = np.searchsorted(x, mids, side="right") / x.size
    ind = (y <= mids).astype(float)
    return float(np.sum(widths * (cdf - ind) ** 2))


def rmse(point_forecasts: np.ndarray, realized: np.ndarray) -> float:
    f = np.asarray(point_forecasts, dtype=float)
    r = np.asarray(realized, dtype=float)
    if f.shape != r.shape or f.size == 0:
        raise ValueError("forecast and realized lengths must match and be nonempty")
    return float(np.sqrt(np.mean((f - r) ** 2)))


@dataclass
class DmResult:
    """Equal-predictive-accuracy test result; p small when the first loss is worse."""

    stat: float
    p_one_sided: float
    n: int
    lrv_fallback: bool = False

    def __iter__(self):
        return iter((self.stat, self.p_one_sided))


def dm_test(loss_a: np.ndarray, loss_b: np.ndarray, h: int) -> DmResult:
    """Diebold-Mariano test on the loss differential loss_a - loss_b.

    Long-run variance is Newey-West with truncation lag h-1 (capped below the
    sample size); a nonpositive estimate falls back to the lag-0 variance
    with a flag. The statistic carries the Harvey small-sample adjustment.
    """
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("loss vectors must align")
    d = a - b
    n = d.size
    if n < 10:
        raise ValueError("need at least 10 loss observations")
    if np.all(d == 0.0):
        raise ValueError("degenerate loss differential")
    dbar = d.mean()
    dc = d - dbar
    lag = min(h - 1, n - 1)
    gamma0 = float(dc @ dc) / n
    lrv = gamma0
    for l in range(1, lag + 1):
        lrv += 2.0 * float(dc[l:] @ dc[:-l]) / n
    fallback = lrv <= 0.0
    if fallback:
        lrv = gamma0
    stat = dbar / np.sqrt(lrv / n)
    inner = (n + 1 - 2 * h + h * (h - 1) / n) / n
    stat *= np.sqrt(max(inner, 0.0))
    return DmResult(stat=float(stat), p_one_sided=float(norm.sf(stat)),
                    n=n, lrv_fallback=fallback)


def pinball_loss(y: np.ndarray, fitted: np.ndarray, q: float) -> float:
    """Mean pinball (quantile) loss."""
    u = np.asarray(y, dtype=float) - np.asarray(fitted, dtype=float)
    return float(np.mean(u * (q - (u < 0))))


def _weighted_pinball_argmin(u: np.ndarray, w: np.ndarray, qvec: np.ndarray) -> float:
    """Exact minimizer of sum w_i * rho_{q_i}(u_i - d) over d (a weighted quantile)."""
    order = np.argsort(u, kind="stable")
    u_s = u[order]
    w_s = w[order]
    target = float(np.sum(w * qvec))
    cum = np.cumsum(w_s)
    j = int(np.searchsorted(cum, target - 1e-12 * max(cum[-1], 1.0)))
    return float(u_s[min(j, u_s.size - 1)])


def fit_quantile_reg(
    y: np.ndarray, x: np.ndarray, q: float,
    tol: float = 1e-8, max_iter: int = 10_000,
) -> np.ndarray:
    """Quantile regression coefficients minimizing the pinball loss.

    Iteratively reweighted least squares with the residual smoothing floor
    decreasing to 1e-6, declared converged when the coefficient change drops
    below tol; the solution is then polished by exact coordinate descent
    (each coordinate minimization is a weighted quantile), which pins sample
    quantiles exactly in the intercept-only case.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if y.size != n or n <= p:
        raise ValueError("need more observations than coefficients")
    if not 0.0 < q < 1.0:
        raise ValueError("quantile level must lie in (0, 1)")

    b, *_ = np.linalg.lstsq(x, y, rcond=None)
    delta = 1e-2
    converged = False
    gap = np.inf
    for _ in range(max_iter):
        r = y - x @ b
        w = np.abs(q - (r < 0)) / np.maximum(np.abs(r), delta)
        xw = x * w[:, None]
        try:
            b_new = np.linalg.solve(xw.T @ x, xw.T @ y)
        except np.linalg.LinAlgError:
            sw = np.sqrt(w)
            b_new, *_ = np.linalg.lstsq(x * sw[:, None], y * sw, rcond=None)
        gap = float(np.max(np.abs(b_new - b)))
        b = b_new
        if gap < tol and delta <= 1e-6:
            converged = True
            break
        delta = max(delta * 0.5, 1e-6)
    if not converged:
        raise ValueError(f"quantile regression did not converge; final gap {gap:.3e}")

    def objective(coef: np.ndarray) -> float:
        u = y - x @ coef
        return float(np.sum(u * (q - (u < 0))))

    best = objective(b)
    for _ in range(50):
        improved = False
        for l in range(p):
            col = x[:, l]
            nz = col != 0.0
            if not np.any(nz):
                continue
            partial = y - x @ b + col * b[l]
            u = partial[nz] / col[nz]
            qvec = np.where(col[nz] > 0, q, 1.0 - q)
            cand = b.copy()
            cand[l] = _weighted_pinball_argmin(u, np.abs(col[nz]), qvec)
            val = objective(cand)
            if val < best - 1e-14 * max(abs(best), 1.0):
                b, best = cand, val
                improved = True
        if not improved:
            break
    return b


@dataclass
class QrSpec:
    """Autoregressive quantile regression setup."""

    levels: tuple[float, ...] = (0.05, 0.95)
    n_lags: int = 4
    extra: np.ndarray | None = None  # (T, E) aligned with the target

    def __post_init__(self) -> None:
        if not all(0.0 < q < 1.0 for q in self.levels):
            raise ValueError("quantile levels must lie strictly inside (0, 1)")
        if self.n_lags < 1:
            raise ValueError("need at least one AR lag")


def qr_tail_quantiles(
    target: np.ndarray,
    spec: QrSpec,
    origins: list[int],
    h: int,
    tcode: str = "none",
) -> np.ndarray:
    """Direct h-step quantile forecasts per origin: (n_origins, n_levels).

    The regressand is the h-step cumulated target (per its transform code);
    regressors are an intercept, n_lags own lags, and optional extra columns,
    all dated at the forecast origin. Training uses only rows whose regressand
    is observed by the origin.
    """
    target = np.asarray(target, dtype=float).ravel()
    roll = _rolling_cumulated(target, h, tcode)  # roll[t] = outcome over t+1..t+h
    out = np.empty((len(origins), len(spec.levels)))
    for oi, origin in enumerate(origins):
        rows = np.arange(spec.n_lags - 1, origin - h + 1)
        if rows.size < 3 * (spec.n_lags + 2):
            raise ValueError("series too short")
        design = _qr_design(target, rows, spec)
        resp = roll[rows]
        x_new = _qr_design(target, np.array([origin]), spec)
        for qi, q in enumerate(spec.levels):
            coef = fit_quantile_reg(resp, design, q)
            out[oi, qi] = float((x_new @ coef)[0])
    return out


def _qr_design(target: np.ndarray, rows: np.ndarray, spec: QrSpec) -> np.ndarray:
    cols = [np.ones(rows.size)]
    for l in range(spec.n_lags):
        cols.append(target[rows - l])
    if spec.extra is not None:
        extra = np.asarray(spec.extra, dtype=float)
        if extra.ndim == 1:
            extra = extra[:, None]
        cols.extend(extra[rows].T)
    return np.column_stack(cols)


def _rolling_cumulated(target: np.ndarray, h: int, tcode: str) -> np.ndarray:
    """roll[t] = cumulated outcome over periods t+1..t+h (nan where undefined)."""
    t_len = target.size
    roll = np.full(t_len, np.nan)
    for t in range(t_len - h):
        roll[t] = cumulate_path(target[t + 1: t + 1 + h], tcode, axis=0)[-1]
    return roll


def quantile_score(forecast_quantiles: np.ndarray, levels: np.ndarray,
                   realized: float) -> float:
    """Tail score 2 * mean_q pinball(realized, q-forecast) over a quantile grid.

    A quantile-based representation of tail-weighted CRPS, used to score
    quantile forecasts in the same units as density forecasts evaluated on
    the same grid.
    """
    fq = np.asarray(forecast_quantiles, dtype=float)
    lv = np.asarray(levels, dtype=float)
    u = realized - fq
    return float(2.0 * np.mean(u * (lv - (u < 0))))


def tail_thresholds(panel: Panel, target: int, origin: int, h: int,
                    tail: tuple[float, float] = (0.10, 0.90)) -> tuple[float, float]:
    """Training-sample thresholds: empirical tail quantiles of the h-step
    cumulated target using only data through the origin."""
    series = panel.raw()[target]
    roll = _rolling_cumulated(series, h, panel.tcodes[target])
    hist = roll[: origin - h + 1]
    hist = hist[~np.isnan(hist)]
    if hist.size < 8:
        raise ValueError("series too short")
    return float(np.quantile(hist, tail[0])), float(np.quantile(hist, tail[1]))


@dataclass
class ScoreTable:
    """Flat score rows: (model, target, horizon, metric, value, ratio, dm_stat, p)."""

    rows: list[dict] = field(default_factory=list)

    def filter(self, **keys) -> list[dict]:
        return [r for r in self.rows
                if all(r.get(k) == v for k, v in keys.items())]

    def to_csv(self, path: str) -> None:
        cols = ["model", "target", "horizon", "metric", "value", "ratio", "dm_stat", "p"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                vals = []
                for c in cols:
                    v = r.get(c)
                    if v is None:
                        vals.append("")
                    elif isinstance(v, float):
                        vals.append(f"{v:.17g}")
                    else:
                        vals.append(str(v))
                fh.write(",".join(vals) + "\n")


METRICS = ("rmse", "crps", "twcrps_left", "twcrps_right")


def compute_thresholds(
    run: ForecastRun, panel: Panel, tail: tuple[float, float] = (0.10, 0.90),
) -> dict[tuple[int, int, int], tuple[float, float]]:
    """Per (origin, horizon, target position) training-sample tail thresholds."""
    out = {}
    for origin in run.scored_origins():
        for h in run.horizons:
            for pos, idx in enumerate(run.target_idx):
                out[(origin, h, pos)] = tail_thresholds(panel, int(idx), origin,
                                                        h, tail)
    return out


def origin_losses(
    run: ForecastRun,
    thresholds: dict[tuple[int, int, int], tuple[float, float]],
    model: str, target_pos: int, h_pos: int,
) -> dict[str, np.ndarray]:
    """Per-origin losses for one (model, target, horizon) cell."""
    h = run.horizons[h_pos]
    losses: dict[str, list[float]] = {m: [] for m in METRICS}
    for origin in run.scored_origins():
        dens = run.densities[(model, origin)]
        draws = dens.draws[:, h - 1, target_pos]
        y = float(run.realized[origin][h_pos, target_pos])
        tau_l, tau_r = thresholds[(origin, h, target_pos)]
        losses["rmse"].append((float(draws.mean()) - y) ** 2)
        losses["crps"].append(crps_sample(draws, y))
        losses["twcrps_left"].append(twcrps_sample(draws, y, hi=tau_l))
        losses["twcrps_right"].append(twcrps_sample(draws, y, lo=tau_r))
    return {m: np.asarray(v) for m, v in losses.items()}


def build_score_table(
    run: ForecastRun,
    thresholds: dict[tuple[int, int, int], tuple[float, float]],
    baseline: str = "benchmark",
) -> ScoreTable:
    """Mean losses per (model, target, horizon, metric), ratios and DM tests
    against the baseline model. RMSE rows aggregate by the root of the mean
    squared error; DM tests for RMSE run on squared-error differentials."""
    models = sorted({m for (m, _) in run.densities})
    table = ScoreTable()
    for target_pos, label in enumerate(run.target_labels):
        for h_pos, h in enumerate(run.horizons):
            cells = {m: origin_losses(run, thresholds, m, target_pos, h_pos)
                     for m in models}
            for model in models:
                for metric in METRICS:
                    vals = cells[model][metric]
                    value = float(np.sqrt(vals.mean())) if metric == "rmse" else float(vals.mean())
                    row = {"model": model, "target": label, "horizon": h,
                           "metric": metric, "value": value,
                           "ratio": None, "dm_stat": None, "p": None}
                    if model != baseline and baseline in cells:
                        base_vals = cells[baseline][metric]
                        base_value = (float(np.sqrt(base_vals.mean()))
                                      if metric == "rmse" else float(base_vals.mean()))
                        row["ratio"] = value / base_value if base_value > 0 else np.inf
                        try:
                            dm = dm_test(vals, base_vals, h)
                            row["dm_stat"], row["p"] = dm.stat, dm.p_one_sided
                        except ValueError:
                            pass
                    table.rows.append(row)
    return table
