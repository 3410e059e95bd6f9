"""Panel ingestion with per-series transform codes, JSON run configs, and
lossless chain/forecast persistence.

Floats are written with 17 significant digits so every CSV round-trips
float64 bitwise; archives carry per-file SHA-256 hashes in a manifest and
refuse to load when the content does not match.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from importlib import resources

import numpy as np
import pandas as pd

from .benchmark import BenchmarkChain, BenchmarkDraw
from .forecast import ForecastRun, PredictiveDensity
from .gibbs import Chain
from .model import FactorPath, ModelConfig, Panel, ParamDraw
from .simulate import DgpSpec

TCODES = ("none", "2", "5", "6")
_TCODE_LOSS = {"none": 0, "2": 1, "5": 1, "6": 2}

_LV_BLOCKS = ("b_level", "b_vol", "rho", "lam", "nu", "gamma", "a_mat", "h_diag")
_BENCH_BLOCKS = ("b_level", "rho", "gamma", "a_mat", "h_diag", "log_omega", "q")


def tcode_loss(code: str) -> int:
    """Leading observations consumed by a transform code."""
    if code not in _TCODE_LOSS:
        raise ValueError(f"unknown transform code: {code}")
    return _TCODE_LOSS[code]


def apply_tcode(series: np.ndarray, code: str, label: str = "series",
                dates: list[str] | None = None) -> np.ndarray:
    """Stationarity transform: none -> identity, 2 -> first difference,
    5 -> log first difference, 6 -> second log difference."""
    x = np.asarray(series, dtype=float)
    loss = tcode_loss(code)
    if x.size <= loss:
        raise ValueError(f"series too short for transform: {label}")
    if code == "none":
        return x.copy()
    if code == "2":
        return np.diff(x)
    bad = np.flatnonzero(x <= 0.0)
    if bad.size:
        when = dates[bad[0]] if dates is not None else f"index {bad[0]}"
        raise ValueError(f"nonpositive value in series {label} at {when}")
    lx = np.log(x)
    return np.diff(lx) if code == "5" else np.diff(np.diff(lx))


def _parse_dates(values: list[str]) -> list[str]:
    """Quarterly period labels from ISO dates or period strings."""
    try:
        idx = pd.PeriodIndex([str(v) for v in values], freq="Q")
    except Exception as exc:
        raise ValueError(f"unparseable date column: {exc}") from None
    steps = np.diff(idx.asi8)
    if len(values) > 1 and not np.all(steps == 1):
        raise ValueError("dates must be strictly increasing at quarterly spacing")
    return [str(p) for p in idx]


def load_panel(path: str, tcodes: dict[str, str] | None = None) -> Panel:
    """Read a dated CSV, transform each series, and standardize to mean 0,
    variance 1 (means and stds are stored on the Panel). The panel is
    trimmed from the front so all series align after the longest transform.
    Missing values anywhere are an error; so is a transform-map key that is
    not a column of the file."""
    df = pd.read_csv(path)
    if df.shape[1] < 2:
        raise ValueError("need a date column plus at least one series")
    date_col = df.columns[0]
    labels = [str(c) for c in df.columns[1:]]
    tcodes = dict(tcodes or {})
    unknown = sorted(set(tcodes) - set(labels))
    if unknown:
        raise ValueError(f"unknown column in transform map: {unknown[0]}")
    dates_raw = _parse_dates(df[date_col].tolist())
    codes = [str(tcodes.get(lbl, "none")) for lbl in labels]

    cols = []
    for lbl, code in zip(labels, codes):
        vals = df[lbl].to_numpy(dtype=float)
        if np.isnan(vals).any():
            raise ValueError(f"missing values in series {lbl}")
        cols.append(apply_tcode(vals, code, label=lbl, dates=dates_raw))

    max_loss = max(tcode_loss(c) for c in codes)
    t_out = len(dates_raw) - max_loss
    if t_out < 2:
        raise ValueError("panel too short after transforms")
    data = np.stack([c[c.size - t_out:] for c in cols])
    means = data.mean(axis=1)
    stds = data.std(axis=1)
    for lbl, s in zip(labels, stds):
        if s <= 0.0 or not np.isfinite(s):
            raise ValueError(f"constant series: {lbl}")
    std_data = (data - means[:, None]) / stds[:, None]
    return Panel(data=std_data, tcodes=tuple(codes), means=means, stds=stds,
                 labels=list(labels), dates=list(dates_raw[max_loss:]))


def write_panel_csv(path: str, values: np.ndarray, labels: list[str],
                    dates: list[str]) -> None:
    """Dated CSV of raw (untransformed-scale) series values."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(labels), len(dates)):
        raise ValueError("values must be (n_series, n_periods)")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date," + ",".join(labels) + "\n")
        for t, d in enumerate(dates):
            row = ",".join(f"{v:.17g}" for v in values[:, t])
            fh.write(f"{d},{row}\n")


def load_fredqd_tcodes() -> dict[str, str]:
    """Bundled transform-code map for the quarterly macro panel."""
    text = resources.files("lvdfm").joinpath("tcodes/fredqd_tcodes.json").read_text()
    return {str(k): str(v) for k, v in json.loads(text).items()}


# ---------------------------------------------------------------------------
# Run configs

DEFAULT_CONFIG: dict = {"model": {}, "dgp": {}, "tcodes": {},
                        "forecast": {}, "fevd": {}, "targets": None,
                        "groups": None}


def load_config(spec: str) -> dict:
    """Run config from a JSON file; the literal "default" uses built-ins."""
    if spec == "default":
        return json.loads(json.dumps(DEFAULT_CONFIG))
    with open(spec, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config root must be a JSON object")
    unknown = sorted(set(cfg) - set(DEFAULT_CONFIG))
    if unknown:
        raise ValueError(f"unknown config section: {unknown[0]}")
    return {**json.loads(json.dumps(DEFAULT_CONFIG)), **cfg}


def model_config_from(config: dict, n_series: int,
                      seed: int | None = None) -> ModelConfig:
    """ModelConfig from the config's model section, sized to the panel."""
    section = dict(config.get("model") or {})
    declared = section.pop("n_series", None)
    if declared is not None and int(declared) != n_series:
        raise ValueError("config n_series does not match the panel")
    if seed is not None:
        section["seed"] = int(seed)
    return ModelConfig.from_dict({"n_series": n_series, **section})


def dgp_spec_from(config: dict, seed: int | None = None) -> tuple[DgpSpec, int]:
    """DgpSpec plus simulation seed from the config's dgp section."""
    section = dict(config.get("dgp") or {})
    sim_seed = int(section.pop("seed", 0))
    if seed is not None:
        sim_seed = int(seed)
    for key in ("phi", "sigma"):
        if key in section:
            section[key] = np.asarray(section[key], dtype=float)
    try:
        spec = DgpSpec(**section)
    except TypeError as exc:
        raise ValueError(f"bad dgp config: {exc}") from None
    return spec, sim_seed


# ---------------------------------------------------------------------------
# Chain archives

def write_matrix_csv(path: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=float)
    flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
    with open(path, "w", encoding="utf-8") as fh:
        for row in flat:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix_csv(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _file_hash(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def store_chain(chain: Chain | BenchmarkChain, path: str,
                panel: Panel | None = None,
                extra: dict | None = None) -> dict:
    """Persist a chain to a directory: manifest.json plus per-block CSVs.

    The manifest records the model kind, config, per-file SHA-256 hashes, an
    overall content hash, and the sampler diagnostics. No timestamps are
    written, so identical chains produce identical archives.
    """
    os.makedirs(path, exist_ok=True)
    is_bench = isinstance(chain, BenchmarkChain)
    blocks = _BENCH_BLOCKS if is_bench else _LV_BLOCKS
    shapes: dict[str, list[int]] = {}
    for name in blocks:
        arr = np.stack([np.atleast_1d(np.asarray(getattr(d, name), dtype=float))
                        for d in chain.draws])
        shapes[name] = list(arr.shape[1:])
        write_matrix_csv(os.path.join(path, f"{name}.csv"), arr)
    fac = np.stack([f.path for f in chain.factor_draws])
    shapes["factors"] = list(fac.shape[1:])
    write_matrix_csv(os.path.join(path, "factors.csv"), fac)

    files = {f"{name}.csv": _file_hash(os.path.join(path, f"{name}.csv"))
             for name in list(blocks) + ["factors"]}
    diagnostics = {k: (np.asarray(v).tolist() if not np.isscalar(v) else v)
                   for k, v in chain.diagnostics.items()}
    manifest = {
        "model": "benchmark" if is_bench else "lv",
        "config": chain.config.to_dict(),
        "seed": chain.config.seed,
        "n_stored": int(chain.n_stored),
        "n_level": int(chain.factor_draws[0].n_level),
        "shapes": shapes,
        "files": files,
        "content_hash": hashlib.sha256(
            json.dumps(files, sort_keys=True).encode()).hexdigest(),
        "diagnostics": diagnostics,
    }
    if panel is not None:
        manifest["panel"] = {"n_periods": panel.n_periods,
                             "labels": list(panel.labels),
                             "tcodes": list(panel.tcodes)}
    if extra:
        overlap = sorted(set(extra) & set(manifest))
        if overlap:
            raise ValueError(f"extra manifest key collides: {overlap[0]}")
        manifest.update(extra)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def load_chain(path: str) -> Chain | BenchmarkChain:
    """Reload a stored chain, verifying every content hash."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ValueError("corrupt archive")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for fname, digest in manifest["files"].items():
        fpath = os.path.join(path, fname)
        if not os.path.exists(fpath) or _file_hash(fpath) != digest:
            raise ValueError("corrupt archive")

    is_bench = manifest["model"] == "benchmark"
    blocks = _BENCH_BLOCKS if is_bench else _LV_BLOCKS
    arrays = {}
    for name in list(blocks) + ["factors"]:
        flat = read_matrix_csv(os.path.join(path, f"{name}.csv"))
        shape = tuple(manifest["shapes"][name])
        arrays[name] = flat.reshape((flat.shape[0],) + shape)

    n_stored = int(manifest["n_stored"])
    n_level = int(manifest["n_level"])
    config = ModelConfig.from_dict(manifest["config"])
    draws = []
    for i in range(n_stored):
        fields = {name: arrays[name][i] for name in blocks}
        draws.append(BenchmarkDraw(**fields) if is_bench else ParamDraw(**fields))
    factor_draws = [FactorPath(arrays["factors"][i], n_level=n_level)
                    for i in range(n_stored)]
    diagnostics = {k: (np.asarray(v) if isinstance(v, list) else v)
                   for k, v in manifest.get("diagnostics", {}).items()}
    cls = BenchmarkChain if is_bench else Chain
    return cls(config=config, draws=draws, factor_draws=factor_draws,
               diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Forecast directories

def store_forecast_dir(path: str, run: ForecastRun,
                       thresholds: dict[tuple[int, int, int], tuple[float, float]],
                       meta_extra: dict | None = None) -> None:
    """Write predictive-draw files, realized outcomes, tail thresholds, and
    run metadata for later scoring."""
    os.makedirs(path, exist_ok=True)
    for (model, origin) in sorted(run.densities):
        dens = run.densities[(model, origin)]
        if not dens.cumulated:
            raise ValueError("store cumulated densities only")
        write_matrix_csv(os.path.join(path, f"draws_{model}_{origin}.csv"), dens.draws)
    with open(os.path.join(path, "realized.csv"), "w", encoding="utf-8") as fh:
        fh.write("origin,horizon,target,value\n")
        for origin in sorted(run.realized):
            vals = run.realized[origin]
            for hi, h in enumerate(run.horizons):
                for v, lbl in enumerate(run.target_labels):
                    fh.write(f"{origin},{h},{lbl},{vals[hi, v]:.17g}\n")
    with open(os.path.join(path, "thresholds.csv"), "w", encoding="utf-8") as fh:
        fh.write("origin,horizon,target,tau_left,tau_right\n")
        for (origin, h, pos) in sorted(thresholds):
            tl, tr = thresholds[(origin, h, pos)]
            fh.write(f"{origin},{h},{run.target_labels[pos]},{tl:.17g},{tr:.17g}\n")
    with open(os.path.join(path, "failures.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["origin", "model", "message"])
        for origin, model, msg in run.failures:
            writer.writerow([origin, model, msg])
    meta = {
        "origins": list(run.origins),
        "horizons": list(run.horizons),
        "target_idx": [int(i) for i in run.target_idx],
        "target_labels": list(run.target_labels),
        "models": sorted({m for (m, _) in run.densities}),
        "draw_shape": {f"{m}_{o}": list(run.densities[(m, o)].draws.shape)
                       for (m, o) in sorted(run.densities)},
    }
    if meta_extra:
        meta.update(meta_extra)
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_forecast_dir(path: str) -> tuple[ForecastRun, dict]:
    """Reload a forecast directory into a run plus its threshold map."""
    with open(os.path.join(path, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    run = ForecastRun(
        origins=[int(o) for o in meta["origins"]],
        horizons=[int(h) for h in meta["horizons"]],
        target_idx=np.asarray(meta["target_idx"], dtype=int),
        target_labels=[str(x) for x in meta["target_labels"]],
    )
    label_pos = {lbl: i for i, lbl in enumerate(run.target_labels)}
    for key, shape in meta["draw_shape"].items():
        model, origin = key.rsplit("_", 1)
        origin = int(origin)
        flat = read_matrix_csv(os.path.join(path, f"draws_{model}_{origin}.csv"))
        run.densities[(model, origin)] = PredictiveDensity(
            draws=flat.reshape(tuple(shape)), origin=origin,
            target_idx=run.target_idx, target_labels=run.target_labels,
            model=model, cumulated=True)
    n_h, n_v = len(run.horizons), len(run.target_labels)
    hpos = {h: i for i, h in enumerate(run.horizons)}
    with open(os.path.join(path, "realized.csv"), "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            o, h, lbl, val = line.rstrip("\n").split(",")
            block = run.realized.setdefault(int(o), np.full((n_h, n_v), np.nan))
            block[hpos[int(h)], label_pos[lbl]] = float(val)
    thresholds = {}
    with open(os.path.join(path, "thresholds.csv"), "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            o, h, lbl, tl, tr = line.rstrip("\n").split(",")
            thresholds[(int(o), int(h), label_pos[lbl])] = (float(tl), float(tr))
    fail_path = os.path.join(path, "failures.csv")
    if os.path.exists(fail_path):
        with open(fail_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                if row:
                    run.failures.append((int(row[0]), row[1], row[2]))
    return run, thresholds
