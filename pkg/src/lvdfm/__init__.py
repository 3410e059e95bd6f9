"""Level-volatility dynamic factor model: estimation, forecasting, scoring.

A latent level factor drives the conditional means of a stationary panel
while a latent volatility factor drives the log variances of the
idiosyncratic shocks; the two factor blocks share one VAR with correlated
innovations, so volatility moves feed back into the conditional mean.
Estimation is a blocked Gibbs sampler whose factor-path step is a
conditional particle filter with ancestor sampling.
"""
from .benchmark import BenchmarkChain, BenchmarkDraw, estimate_benchmark
from .dataio import (apply_tcode, load_chain, load_config, load_fredqd_tcodes,
                     load_forecast_dir, load_panel, store_chain,
                     store_forecast_dir, write_panel_csv)
from .evaluate import (DmResult, QrSpec, ScoreTable, build_score_table,
                       compute_thresholds, crps_sample, dm_test,
                       fit_quantile_reg, pinball_loss, qr_tail_quantiles,
                       quantile_score, rmse, tail_thresholds, twcrps_sample)
from .fevd import (FevdRow, FevdTable, GroupMask, apply_group_mask,
                   fevd_shares, fevd_table, grouped_free_masks)
from .forecast import (ForecastRun, PredictiveDensity, cumulate_growth,
                       cumulate_path, expanding_window_run, predictive_draws,
                       realized_outcomes, simulate_future_lv)
from .gibbs import Chain, run_chain
from .model import (FactorPath, ModelConfig, Panel, ParamDraw,
                    VolatilityOverflowError)
from .pgas import ParticleDegeneracyError, pgas_draw
from .priors import PriorSet, build_priorset, pca_extract
from .simulate import (DgpSpec, GroundTruth, default_dgp, simulate_panel,
                       truth_in_model_units)
from .statespace import (StateSpace, build_qd_statespace, kalman_filter,
                         simulation_smoother, smooth_moments)
from .util import rng_from

__version__ = "0.1.0"

__all__ = [
    "BenchmarkChain", "BenchmarkDraw", "Chain", "DgpSpec", "DmResult",
    "FactorPath", "FevdRow", "FevdTable", "ForecastRun", "GroundTruth",
    "GroupMask", "ModelConfig", "Panel", "ParamDraw", "ParticleDegeneracyError",
    "PredictiveDensity", "PriorSet", "QrSpec", "ScoreTable", "StateSpace",
    "VolatilityOverflowError", "apply_group_mask", "apply_tcode",
    "build_priorset", "build_qd_statespace", "build_score_table",
    "compute_thresholds", "crps_sample", "cumulate_growth", "cumulate_path",
    "default_dgp", "dm_test", "estimate_benchmark", "expanding_window_run",
    "fevd_shares", "fevd_table", "fit_quantile_reg", "grouped_free_masks",
    "kalman_filter", "load_chain", "load_config", "load_forecast_dir",
    "load_fredqd_tcodes", "load_panel", "pca_extract", "pgas_draw",
    "pinball_loss", "predictive_draws", "qr_tail_quantiles", "quantile_score",
    "realized_outcomes", "rmse", "rng_from", "run_chain", "simulate_future_lv",
    "simulate_panel", "simulation_smoother", "smooth_moments", "store_chain",
    "store_forecast_dir", "tail_thresholds", "truth_in_model_units",
    "twcrps_sample", "write_panel_csv",
]
