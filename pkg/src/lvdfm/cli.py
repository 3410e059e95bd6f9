"""Command-line entry point: simulate, estimate, forecast, evaluate, fevd.

Every run is driven by a JSON config (or the built-in defaults via
``--config default``) plus a seed; identical config and seed reproduce
byte-identical outputs. The LVDFM_SEED environment variable overrides any
configured or flagged seed. Exit codes: 0 success, 1 runtime error with a
single-line diagnostic on stderr, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataio
from .benchmark import estimate_benchmark
from .evaluate import build_score_table, tail_thresholds
from .fevd import GroupMask, fevd_table, grouped_free_masks
from .forecast import (ForecastRun, cumulate_growth, predictive_draws,
                       realized_outcomes)
from .gibbs import run_chain
from .simulate import simulate_panel
from .util import rng_from


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default="default",
                     help="JSON config path, or 'default'")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker-pool cap for multi-origin drivers")
    sub.add_argument("--out", required=True, help="output directory or file")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lvdfm",
        description="Level-volatility dynamic factor model toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="draw a synthetic panel and truth set")
    _add_common(p)

    p = subs.add_parser("estimate", help="run the posterior sampler on a panel")
    _add_common(p)
    p.add_argument("--data", required=True, help="panel CSV")
    p.add_argument("--model", choices=("lv", "benchmark"), default="lv")

    p = subs.add_parser("forecast",
                        help="predictive draws from stored chains")
    _add_common(p)
    p.add_argument("--data", required=True, help="panel CSV")
    p.add_argument("--archive", action="append", required=True,
                   help="chain archive directory (repeatable)")

    p = subs.add_parser("evaluate", help="score stored predictive draws")
    _add_common(p)
    p.add_argument("--forecast-dir", required=True)
    p.add_argument("--baseline", default="benchmark")

    p = subs.add_parser("fevd", help="variance shares from a grouped chain")
    _add_common(p)
    p.add_argument("--archive", required=True)
    return parser


def _resolve_seed(args_seed: int | None, config_seed: int) -> int:
    env = os.environ.get("LVDFM_SEED")
    if env is not None:
        return int(env)
    if args_seed is not None:
        return int(args_seed)
    return int(config_seed)


def _cmd_simulate(args) -> int:
    config = dataio.load_config(args.config)
    spec, sim_seed = dataio.dgp_spec_from(config)
    sim_seed = _resolve_seed(args.seed, sim_seed)
    panel, truth = simulate_panel(spec, sim_seed)
    os.makedirs(args.out, exist_ok=True)
    dataio.write_panel_csv(os.path.join(args.out, "panel.csv"),
                           panel.raw(), panel.labels, panel.dates)
    truth_dir = os.path.join(args.out, "truth")
    os.makedirs(truth_dir, exist_ok=True)
    blocks = {
        "factors": truth.factors.path,
        "level_loadings": truth.b_level,
        "vol_loadings": truth.b_vol,
        "idio_ar": truth.rho,
        "dofs": truth.nu,
        "mixing": truth.lam,
        "idio_var": truth.r,
    }
    for name, arr in blocks.items():
        dataio.write_matrix_csv(os.path.join(truth_dir, f"{name}.csv"),
                                np.asarray(arr, dtype=float))
    meta = {"seed": sim_seed, "n_series": spec.n_series,
            "n_level": spec.n_level, "n_vol": spec.n_vol,
            "n_periods": panel.n_periods}
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def _cmd_estimate(args) -> int:
    config = dataio.load_config(args.config)
    panel = dataio.load_panel(args.data, config.get("tcodes") or {})
    model_cfg = dataio.model_config_from(config, panel.n_series)
    seed = _resolve_seed(args.seed, model_cfg.seed)
    if seed != model_cfg.seed:
        model_cfg = dataio.model_config_from(config, panel.n_series, seed)
    groups = config.get("groups")
    extra = None
    if args.model == "benchmark":
        chain = estimate_benchmark(panel, model_cfg)
    elif groups:
        mask = GroupMask(tuple(groups))
        free_level, free_vol = grouped_free_masks(mask)
        chain = run_chain(panel, model_cfg, free_mask_level=free_level,
                          free_mask_vol=free_vol)
        extra = {"groups": list(groups)}
    else:
        chain = run_chain(panel, model_cfg)
    dataio.store_chain(chain, args.out, panel=panel, extra=extra)
    return 0


def _cmd_forecast(args) -> int:
    config = dataio.load_config(args.config)
    panel = dataio.load_panel(args.data, config.get("tcodes") or {})
    fcfg = config.get("forecast") or {}
    horizons = [int(h) for h in fcfg.get("horizons", (4, 8))]
    m_per_draw = int(fcfg.get("m_per_draw", 5))
    tail = tuple(fcfg.get("tail", (0.10, 0.90)))
    target_labels_cfg = config.get("targets")
    if target_labels_cfg:
        targets = np.asarray([panel.labels.index(t) for t in target_labels_cfg])
    else:
        targets = np.arange(panel.n_series)
    h_max = max(horizons)

    densities = {}
    failures = []
    realized = {}
    origins = []
    base_seed = _resolve_seed(args.seed, 0)
    for arch in args.archive:
        chain = dataio.load_chain(arch)
        with open(os.path.join(arch, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        pan_meta = manifest.get("panel")
        if pan_meta is None:
            raise ValueError(f"archive lacks panel metadata: {arch}")
        if pan_meta["labels"] != panel.labels:
            raise ValueError(f"archive panel does not match the data file: {arch}")
        t_est = int(pan_meta["n_periods"])
        origin = t_est - 1
        window = panel.window(t_est)
        model = manifest["model"]
        if origin not in origins:
            origins.append(origin)
        try:
            dens = predictive_draws(chain, window, h_max, m_per_draw,
                                    targets=targets,
                                    rng=rng_from(base_seed, origin, 7),
                                    model=model)
            tcodes_t = [panel.tcodes[i] for i in targets]
            densities[(model, origin)] = cumulate_growth(dens, tcodes_t)
            realized[origin] = realized_outcomes(panel, origin, horizons, targets)
        except ValueError as exc:
            failures.append((origin, model, str(exc)))
    run = ForecastRun(
        origins=sorted(origins), horizons=horizons, target_idx=targets,
        target_labels=[panel.labels[i] for i in targets],
        densities=densities, realized=realized, failures=failures)
    thresholds = {}
    for origin in run.scored_origins():
        for h in horizons:
            for pos, idx in enumerate(targets):
                thresholds[(origin, h, pos)] = tail_thresholds(
                    panel, int(idx), origin, h, tail)
    dataio.store_forecast_dir(args.out, run, thresholds,
                              meta_extra={"seed": base_seed})
    return 0


def _cmd_evaluate(args) -> int:
    run, thresholds = dataio.load_forecast_dir(args.forecast_dir)
    table = build_score_table(run, thresholds, baseline=args.baseline)
    out = args.out
    if os.path.isdir(out):
        out = os.path.join(out, "scores.csv")
    table.to_csv(out)
    return 0


def _cmd_fevd(args) -> int:
    config = dataio.load_config(args.config)
    fcfg = config.get("fevd") or {}
    chain = dataio.load_chain(args.archive)
    with open(os.path.join(args.archive, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    labels_all = (manifest.get("panel") or {}).get("labels")
    n = chain.draws[0].b_level.shape[0]
    series_cfg = fcfg.get("series")
    if series_cfg:
        if labels_all and all(isinstance(s, str) for s in series_cfg):
            series = [labels_all.index(s) for s in series_cfg]
        else:
            series = [int(s) for s in series_cfg]
    else:
        series = list(range(min(4, n)))
    labels = [labels_all[i] for i in series] if labels_all else [str(i) for i in series]
    ordering = fcfg.get("ordering")
    table = fevd_table(
        chain, series, labels=labels,
        horizons=tuple(int(h) for h in fcfg.get("horizons", (1, 4, 8, 16))),
        n_sims=int(fcfg.get("n_sims", 1000)),
        max_draws=int(fcfg.get("max_draws", 50)),
        seed=_resolve_seed(args.seed, 0),
        ordering=tuple(int(i) for i in ordering) if ordering else None)
    out = args.out
    if os.path.isdir(out):
        out = os.path.join(out, "fevd.csv")
    table.to_csv(out)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "forecast": _cmd_forecast,
    "evaluate": _cmd_evaluate,
    "fevd": _cmd_fevd,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single-line CLI diagnostic
        msg = str(exc).replace("\n", " ") or exc.__class__.__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(cli_main())
