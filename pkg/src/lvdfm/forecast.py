"""Predictive simulation and expanding-window forecast experiments.

Each stored posterior draw seeds a handful of future paths simulated from the
model dynamics; the pooled paths form the predictive density. Growth-rate
transforms are cumulated across horizons so densities refer to cumulative
growth over the forecast window. The expanding-window driver re-estimates
both models at every origin on re-standardized data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .benchmark import BenchmarkChain, estimate_benchmark
from .gibbs import Chain, run_chain
from .model import EXPONENT_CLAMP, ModelConfig, Panel
from .util import rng_from

MIN_EVAL_DRAWS = 100


@dataclass
class PredictiveDensity:
    """Simulated future paths for selected series, transformed (not standardized) units.

    draws has shape (M, horizon, n_targets); horizon step s is calendar
    period origin + 1 + s. cumulated marks growth transforms already summed
    across horizon steps.
    """

    draws: np.ndarray
    origin: int
    target_idx: np.ndarray
    target_labels: list[str]
    model: str
    cumulated: bool = False

    def __post_init__(self) -> None:
        if self.draws.ndim != 3:
            raise ValueError("draws must be (M, horizon, n_targets)")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def horizon(self) -> int:
        return self.draws.shape[1]

    def quantile(self, level: float, h: int, target: int = 0) -> float:
        return float(np.quantile(self.draws[:, h - 1, target], level))


def simulate_future_lv(
    b_level: np.ndarray,
    b_vol: np.ndarray,
    rho: np.ndarray,
    nu: np.ndarray,
    coef_lags: np.ndarray,
    intercept: np.ndarray,
    omega_chol: np.ndarray,
    f_lags: np.ndarray,
    v_lags: np.ndarray,
    horizon: int,
    n_sims: int,
    rng: np.random.Generator,
    vol_shift: np.ndarray | None = None,
) -> np.ndarray:
    """Simulate (n_sims, horizon, N) future observations from one parameter draw.

    f_lags is (L_F, n_fac) with the most recent factor state first; v_lags is
    (N, L_v) with the most recent idiosyncratic value in column 0. Future
    mixing scales come from their gamma prior. vol_shift, if given, is added
    to the volatility block of every lagged factor state at the origin.
    """
    n = b_level.shape[0]
    j = b_level.shape[1]
    k = b_vol.shape[1]
    lag_f, n_fac = f_lags.shape
    lag_v = rho.shape[1]

    f_state = np.repeat(f_lags[None, :, :], n_sims, axis=0)
    if vol_shift is not None:
        f_state[:, :, j:] += vol_shift[None, None, :]
    v_state = np.repeat(v_lags[None, :, :], n_sims, axis=0)  # (n_sims, N, L_v)
    out = np.empty((n_sims, horizon, n))
    coef_w = np.concatenate(list(coef_lags), axis=1)  # (n_fac, L_F*n_fac)

    for s in range(horizon):
        pred = f_state.reshape(n_sims, lag_f * n_fac) @ coef_w.T + intercept
        f_new = pred + rng.standard_normal((n_sims, n_fac)) @ omega_chol.T
        expo = np.clip(f_new[:, j:] @ b_vol.T, -EXPONENT_CLAMP, EXPONENT_CLAMP)
        lam = rng.gamma(np.broadcast_to(nu / 2.0, (n_sims, n))) / (nu / 2.0)
        r = np.exp(expo) / lam
        eps = np.sqrt(r) * rng.standard_normal((n_sims, n))
        v_new = eps
        for l in range(lag_v):
            v_new = v_new + rho[:, l] * v_state[:, :, l]
        out[:, s, :] = f_new[:, :j] @ b_level.T + v_new
        if lag_f > 1:
            f_state = np.concatenate([f_new[:, None, :], f_state[:, :-1]], axis=1)
        else:
            f_state = f_new[:, None, :]
        if lag_v > 0:
            v_state = np.concatenate([v_new[:, :, None], v_state[:, :, :-1]], axis=2)
    return out


def simulate_future_benchmark(
    b_level: np.ndarray,
    rho: np.ndarray,
    q: np.ndarray,
    coef_lags: np.ndarray,
    intercept: np.ndarray,
    omega_chol: np.ndarray,
    f_lags: np.ndarray,
    v_lags: np.ndarray,
    logvol0: np.ndarray,
    horizon: int,
    n_sims: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Future paths under the benchmark: log variances continue as random walks."""
    n = b_level.shape[0]
    j = b_level.shape[1]
    lag_f, n_fac = f_lags.shape
    lag_v = rho.shape[1]
    f_state = np.repeat(f_lags[None, :, :], n_sims, axis=0)
    v_state = np.repeat(v_lags[None, :, :], n_sims, axis=0)
    logvol = np.repeat(logvol0[None, :], n_sims, axis=0)
    out = np.empty((n_sims, horizon, n))
    coef_w = np.concatenate(list(coef_lags), axis=1)
    sq = np.sqrt(q)
    for s in range(horizon):
        pred = f_state.reshape(n_sims, lag_f * n_fac) @ coef_w.T + intercept
        f_new = pred + rng.standard_normal((n_sims, n_fac)) @ omega_chol.T
        logvol = logvol + sq * rng.standard_normal((n_sims, n))
        logvol = np.clip(logvol, -EXPONENT_CLAMP, EXPONENT_CLAMP)
        eps = np.exp(0.5 * logvol) * rng.standard_normal((n_sims, n))
        v_new = eps
        for l in range(lag_v):
            v_new = v_new + rho[:, l] * v_state[:, :, l]
        out[:, s, :] = f_new[:, :j] @ b_level.T + v_new
        if lag_f > 1:
            f_state = np.concatenate([f_new[:, None, :], f_state[:, :-1]], axis=1)
        else:
            f_state = f_new[:, None, :]
        if lag_v > 0:
            v_state = np.concatenate([v_new[:, :, None], v_state[:, :, :-1]], axis=2)
    return out


def _factor_lags(path: np.ndarray, lag_f: int) -> np.ndarray:
    return path[::-1][:lag_f].copy()


def _idio_lags(data: np.ndarray, b_level: np.ndarray, level_path: np.ndarray,
               lag_v: int) -> np.ndarray:
    v = data - b_level @ level_path.T
    return v[:, ::-1][:, :lag_v].copy()


def predictive_draws(
    chain: Chain | BenchmarkChain,
    panel: Panel,
    horizon: int,
    m_per_draw: int = 5,
    targets: np.ndarray | list[int] | None = None,
    rng: np.random.Generator | None = None,
    model: str | None = None,
) -> PredictiveDensity:
    """Pool m_per_draw simulated futures per stored draw into one predictive density.

    Values are de-standardized to transformed units for the requested target
    series. The forecast origin is the last period of the panel the chain was
    estimated on.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(chain.config.seed + 1))
    if targets is None:
        targets = np.arange(panel.n_series)
    targets = np.asarray(targets, dtype=int)
    if chain.n_stored * m_per_draw < MIN_EVAL_DRAWS:
        raise ValueError("too few predictive draws for evaluation")
    lag_f = chain.config.lag_factor
    lag_v = chain.config.lag_idio
    is_benchmark = isinstance(chain, BenchmarkChain)
    sims = []
    for d, fac in zip(chain.draws, chain.factor_draws):
        f_lags = _factor_lags(fac.path, lag_f)
        v_lags = _idio_lags(panel.data, d.b_level, fac.path[:, :d.b_level.shape[1]], lag_v)
        if is_benchmark:
            coef = _stack_lags(d.gamma, d.b_level.shape[1], lag_f)
            omch = _chol_from(d.a_mat, d.h_diag)
            sim = simulate_future_benchmark(
                d.b_level, d.rho, d.q, coef, d.gamma[-1], omch, f_lags, v_lags,
                d.log_omega[:, -1], horizon, m_per_draw, rng)
        else:
            sim = simulate_future_lv(
                d.b_level, d.b_vol, d.rho, d.nu, d.coef_lags(), d.intercept(),
                d.omega_chol(), f_lags, v_lags, horizon, m_per_draw, rng)
        sims.append(sim[:, :, targets])
    draws = np.concatenate(sims, axis=0)
    draws = draws * panel.stds[targets] + panel.means[targets]
    return PredictiveDensity(
        draws=draws,
        origin=panel.n_periods - 1,
        target_idx=targets,
        target_labels=[panel.labels[i] for i in targets],
        model=model or ("benchmark" if is_benchmark else "lv"),
    )


def _stack_lags(gamma: np.ndarray, n_fac: int, lags: int) -> np.ndarray:
    return np.stack([gamma[l * n_fac:(l + 1) * n_fac, :].T for l in range(lags)])


def _chol_from(a_mat: np.ndarray, h_diag: np.ndarray) -> np.ndarray:
    return np.linalg.inv(a_mat) * np.sqrt(h_diag)


def cumulate_path(values: np.ndarray, tcode: str, axis: int = 0) -> np.ndarray:
    """Cumulate per-period transformed values across horizon steps.

    Growth rates (code 5) sum to cumulative growth; second differences of
    logs (code 6) sum twice. Levels and first differences (none, 2) are
    reported as the value at each horizon.
    """
    if tcode in ("none", "2"):
        return values
    if tcode == "5":
        return np.cumsum(values, axis=axis)
    if tcode == "6":
        return np.cumsum(np.cumsum(values, axis=axis), axis=axis)
    raise ValueError(f"unknown transform code: {tcode}")


def cumulate_growth(density: PredictiveDensity, tcodes: list[str]) -> PredictiveDensity:
    """Cumulated copy of a predictive density; tcodes align with its targets."""
    if density.cumulated:
        raise ValueError("density already cumulated")
    if len(tcodes) != density.draws.shape[2]:
        raise ValueError("one transform code per target required")
    out = density.draws.copy()
    for v, code in enumerate(tcodes):
        out[:, :, v] = cumulate_path(density.draws[:, :, v], code, axis=1)
    return PredictiveDensity(out, density.origin, density.target_idx,
                             list(density.target_labels), density.model, cumulated=True)


def realized_outcomes(
    panel: Panel, origin: int, horizons: list[int], targets: np.ndarray
) -> np.ndarray:
    """Realized cumulated outcomes (len(horizons), n_targets) in transformed units."""
    h_max = max(horizons)
    if origin + h_max > panel.n_periods - 1:
        raise ValueError("horizon runs past the end of the sample")
    raw = panel.raw()
    future = raw[np.asarray(targets, dtype=int), origin + 1: origin + 1 + h_max].T
    out = np.empty((len(horizons), len(targets)))
    for v, ti in enumerate(np.asarray(targets, dtype=int)):
        cum = cumulate_path(future[:, v], panel.tcodes[ti], axis=0)
        out[:, v] = [cum[h - 1] for h in horizons]
    return out


@dataclass
class ForecastRun:
    """Expanding-window predictive densities for both models plus realized outcomes."""

    origins: list[int]
    horizons: list[int]
    target_idx: np.ndarray
    target_labels: list[str]
    densities: dict = field(default_factory=dict)  # (model, origin) -> PredictiveDensity
    realized: dict = field(default_factory=dict)  # origin -> (n_h, n_targets)
    failures: list = field(default_factory=list)  # (origin, model, message)

    def scored_origins(self) -> list[int]:
        failed = {o for o, _, _ in self.failures}
        return [o for o in self.origins if o not in failed]


def _estimate_one_origin(args) -> tuple[int, dict, list]:
    (panel, config_lv, config_bench, origin, horizons, m_per_draw, base_seed,
     models, targets) = args
    window = panel.window(origin + 1)
    h_max = max(horizons)
    densities = {}
    failures = []
    tcodes_t = [window.tcodes[i] for i in targets]
    for name in models:
        try:
            rng = rng_from(base_seed, origin, 0 if name == "lv" else 1)
            if name == "lv":
                chain = run_chain(window, config_lv, rng=rng)
            else:
                chain = estimate_benchmark(window, config_bench, rng=rng)
            dens = predictive_draws(chain, window, h_max, m_per_draw, targets=targets,
                                    rng=rng_from(base_seed, origin, 7), model=name)
            densities[(name, origin)] = cumulate_growth(dens, tcodes_t)
        except Exception as exc:  # noqa: BLE001 - recorded, run continues
            failures.append((origin, name, str(exc)))
    return origin, densities, failures


def expanding_window_run(
    panel: Panel,
    config_lv: ModelConfig,
    config_bench: ModelConfig | None = None,
    origins: list[int] | None = None,
    horizons: list[int] = (4, 8),
    m_per_draw: int = 5,
    targets: np.ndarray | list[int] | None = None,
    models: tuple[str, ...] = ("lv", "benchmark"),
    threads: int = 1,
    progress: bool = False,
) -> ForecastRun:
    """Re-estimate at each origin on the expanded window and collect densities.

    An estimation failure at an origin records the error and drops that
    origin from scoring rather than aborting the run. Results are identical
    for any thread count because every origin draws from its own substream.
    """
    if config_bench is None:
        config_bench = ModelConfig(**{**config_lv.to_dict(), "n_vol": 0})
    if origins is None:
        t = panel.n_periods
        h_max = max(horizons)
        first = max(int(0.6 * t), config_lv.presample + 40)
        origins = list(range(first, t - h_max, max((t - h_max - first) // 8, 1)))[:8]
    targets = (np.arange(panel.n_series) if targets is None
               else np.asarray(targets, dtype=int))
    horizons = list(horizons)
    run = ForecastRun(
        origins=list(origins), horizons=horizons, target_idx=targets,
        target_labels=[panel.labels[i] for i in targets])

    jobs = [(panel, config_lv, config_bench, o, horizons, m_per_draw,
             config_lv.seed, models, targets) for o in origins]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_estimate_one_origin, jobs))
    else:
        results = [_estimate_one_origin(j) for j in jobs]

    for origin, densities, failures in results:
        run.densities.update(densities)
        run.failures.extend(failures)
        if not failures:
            run.realized[origin] = realized_outcomes(panel, origin, horizons, targets)
        if progress:
            print(f"origin {origin} done", flush=True)
    return run
