"""Configured experiments: simulation over description subsets, delta/noise sweeps, binning sweeps.

Configs are TOML files with sections [scheme], [run], [binning], [sweep]
and [tolerances].  Every emitted empirical number sits next to its
theoretical counterpart and a deviation column.
"""
from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import tomli

from . import __version__, binning, codec, theory
from .codec import DescriptionSet, SchemeParams

SCHEMA_VERSION = 1
MIN_SAMPLES = 2 ** 15
FULL_SAMPLES = 2 ** 18

DEFAULT_TOLERANCES = {
    "mse_rel": 0.03,      # closed-form MSE rows
    "model_rel": 0.05,    # rows whose reference is the LMMSE model prediction
    "rate_abs": 0.05,     # plug-in vs Gaussian rate, bits
    "binning_window": 0.75,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scheme: SchemeParams
    trials: int = 8
    samples_per_trial: int = FULL_SAMPLES
    subsets: str | list[list[int]] = "all"
    binning: dict[str, Any] | None = None
    sweep: dict[str, Any] | None = None
    output: str = "results"
    seed: int = 0
    tolerances: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    window: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.samples_per_trial < MIN_SAMPLES:
            raise ConfigError(f"samples_per_trial must be >= {MIN_SAMPLES}")
        if (self.samples_per_trial * self.scheme.lam) % self.scheme.L:
            raise ConfigError("samples_per_trial * lambda must be divisible by L")


def _scheme_from(table: dict, seed: int) -> SchemeParams:
    known = {"L", "K", "lam", "lambda", "delta", "sigma_E2", "sigma_x2", "filter_order"}
    extra = set(table) - known
    if extra:
        raise ConfigError(f"unknown [scheme] keys: {sorted(extra)}")
    try:
        L = int(table["L"])
        K = int(table.get("K", L))
        lam = int(table.get("lam", table.get("lambda", L)))
        return SchemeParams(L=L, K=K, lam=lam, delta=float(table["delta"]),
                            sigma_E2=float(table["sigma_E2"]),
                            sigma_x2=float(table.get("sigma_x2", 1.0)),
                            filter_order=int(table.get("filter_order", 256)), seed=seed)
    except KeyError as exc:
        raise ConfigError(f"[scheme] is missing {exc.args[0]!r}") from exc
    except (codec.CodecError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(data: dict) -> ExperimentConfig:
    if "scheme" not in data:
        raise ConfigError("config needs a [scheme] section")
    run = dict(data.get("run", {}))
    seed = int(run.pop("seed", 0))
    scheme = _scheme_from(dict(data["scheme"]), seed)
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in data.get("tolerances", {}).items():
        if k not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown tolerance {k!r}")
        tol[k] = float(v)
    subsets = run.pop("subsets", "all")
    if isinstance(subsets, str) and subsets not in ("all", "uniform_only"):
        raise ConfigError(f"subsets must be 'all', 'uniform_only' or a list, got {subsets!r}")
    cfg = ExperimentConfig(
        scheme=scheme,
        trials=int(run.pop("trials", 8)),
        samples_per_trial=int(run.pop("samples_per_trial", FULL_SAMPLES)),
        subsets=subsets,
        binning=dict(data["binning"]) if "binning" in data else None,
        sweep=dict(data["sweep"]) if "sweep" in data else None,
        output=str(run.pop("output", "results")),
        seed=seed,
        tolerances=tol,
        window=run.pop("window", None),
    )
    if run:
        raise ConfigError(f"unknown [run] keys: {sorted(run)}")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return parse_config(data)


def worker_count(jobs: int) -> int:
    cap = os.environ.get("MDQ_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, int(cap))
        except ValueError as exc:
            raise ConfigError(f"MDQ_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(n, jobs))


def version_string() -> str:
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# --- simulation ---------------------------------------------------------------

@dataclass
class SubsetRecord:
    subset: str
    size: int
    classification: str
    amplified: bool
    aliased: bool
    mse: float
    mse_stderr: float
    theory_mse: float
    theory_source: str
    mse_rel_dev: float
    rate_empirical: float
    rate_theory: float
    rate_abs_dev: float
    within_tolerance: bool


@dataclass
class ExperimentResult:
    records: list[SubsetRecord]
    metadata: dict
    warning: bool
    passed: bool
    rate_binning: float | None = None

    def record(self, label: str) -> SubsetRecord:
        for r in self.records:
            if r.subset == label:
                return r
        raise KeyError(label)


def _resolve_subsets(cfg: ExperimentConfig) -> list[DescriptionSet]:
    subs = codec.enumerate_subsets(cfg.scheme.L, cfg.subsets)
    return sorted(subs, key=lambda s: (len(s), s.members))


def _run_trial(cfg: ExperimentConfig, subsets: Sequence[DescriptionSet], trial: int):
    p = cfg.scheme
    shaper = p.shaper()
    x = codec.source_sequence(p.seed, trial, cfg.samples_per_trial, p.sigma_x2)
    enc = codec.encode(x, p, trial=trial, shaper=shaper)
    guard = codec.guard_source(p)
    out = {}
    for s in subsets:
        recv = [enc.descriptions[i] for i in s.members]
        if p.nyquist:
            xhat = codec.decode_nyquist(recv, p)
            predicted = None
        else:
            dec = codec.decode_subnyquist(recv, p, shaper=shaper, window=cfg.window)
            xhat, predicted = dec.estimate, dec.predicted_mse
        err = codec.squared_errors(x, xhat, guard)
        out[s.members] = (codec.batch_means(err), predicted)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rate = codec.empirical_rate(enc.descriptions, p, shaper=shaper)
    return out, rate


def _theory_for(p: SchemeParams, s: DescriptionSet, predicted: float | None):
    aliased = (not p.nyquist) and len(s) < p.K
    if p.nyquist:
        return theory.dsq_distortion(p.dsq(), len(s), p.sigma_x2), "closed_form", False
    if s.uniform and not aliased:
        val = codec.uniform_theory_mse(p, len(s))
        if val is not None:
            return val, "closed_form", aliased
    return float(predicted), "lmmse_model", aliased


def run_simulation(cfg: ExperimentConfig) -> ExperimentResult:
    p = cfg.scheme
    started = time.time()
    subsets = _resolve_subsets(cfg)
    p.shaper()  # design once before fanning out
    with ThreadPoolExecutor(max_workers=worker_count(cfg.trials)) as pool:
        trials = list(pool.map(lambda t: _run_trial(cfg, subsets, t), range(cfg.trials)))
    tol = cfg.tolerances
    rates = [r for _, r in trials]
    rate_emp = float(np.mean([r.plugin for r in rates]))
    rate_th = float(np.mean([r.gaussian for r in rates]))
    few = any(r.few_samples for r in rates)
    records = []
    all_ok = True
    for s in subsets:
        batches = np.concatenate([t[0][s.members][0] for t in trials])
        mse, se = codec.mean_and_stderr(batches)
        predicted = float(np.mean([t[0][s.members][1] for t in trials])) if not p.nyquist else None
        th, source, aliased = _theory_for(p, s, predicted)
        dev = (mse - th) / th
        limit = tol["mse_rel"] if source == "closed_form" else tol["model_rel"]
        rate_dev = rate_emp - rate_th
        ok = abs(dev) <= limit and abs(rate_dev) <= tol["rate_abs"]
        all_ok &= ok
        amplified = (not p.nyquist) and not s.uniform and not aliased
        records.append(SubsetRecord(s.label(), len(s), s.classification, amplified, aliased,
                                    mse, se, th, source, dev, rate_emp, rate_th, rate_dev, ok))
    warning = cfg.trials < 2 or cfg.samples_per_trial < FULL_SAMPLES or few
    rb = None
    if p.nyquist and p.K <= p.L:
        rb = float(theory.dsq_rb_rate(p.dsq(), p.K, p.sigma_x2).bits)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "version": version_string(),
        "seed": cfg.seed,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "trials": cfg.trials,
        "samples_per_trial": cfg.samples_per_trial,
        "scheme": asdict(p),
        "tolerances": tol,
        "binning_rate_theory": rb,
        "warning": warning,
    }
    return ExperimentResult(records, meta, warning, all_ok, rb)


SIM_COLUMNS = ("schema_version",) + tuple(SubsetRecord.__dataclass_fields__)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def write_simulation(result: ExperimentResult, out_dir, stem: str = "simulate") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SIM_COLUMNS)
        for r in result.records:
            w.writerow([SCHEMA_VERSION, *(_fmt(v) for v in asdict(r).values())])
    with open(json_path, "w") as fh:
        json.dump({"metadata": result.metadata, "passed": result.passed,
                   "records": [asdict(r) for r in result.records]}, fh, indent=2)
    return csv_path, json_path


# --- delta / noise sweeps ---------------------------------------------------

@dataclass
class SweepRow:
    delta: float
    sigma_E2: float
    d_K_theory: float
    d_L_theory: float
    d_K_emp: float
    d_L_emp: float
    d_K_rel_dev: float
    d_L_rel_dev: float
    R_theory: float
    R_emp: float
    within_tolerance: bool


SWEEP_COLUMNS = ("schema_version",) + tuple(SweepRow.__dataclass_fields__)


def run_sweep(cfg: ExperimentConfig) -> tuple[list[SweepRow], bool]:
    """Side/central distortion trade-off over a grid of delta or sigma_E2."""
    table = cfg.sweep or {}
    param = table.get("param", "delta")
    if param not in ("delta", "sigma_E2"):
        raise ConfigError(f"sweep param must be delta or sigma_E2, got {param!r}")
    values = [float(v) for v in table.get("values", [])]
    if not values:
        raise ConfigError("[sweep] needs a non-empty 'values' list")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("sweep grid must be strictly increasing")
    base = cfg.scheme
    rows, ok_all = [], True
    for v in values:
        kw = asdict(base)
        kw[param] = v
        try:
            p = SchemeParams(**kw)
        except codec.CodecError as exc:
            raise ConfigError(str(exc)) from exc
        K = base.K
        size_k = [s.members for s in codec.enumerate_subsets(p.L) if len(s) == K and
                  (p.nyquist or s.uniform)]
        sub = ExperimentConfig(p, cfg.trials, cfg.samples_per_trial,
                               [list(m) for m in size_k] + [list(range(p.L))],
                               output=cfg.output, seed=cfg.seed, tolerances=cfg.tolerances,
                               window=cfg.window)
        res = run_simulation(sub)
        k_rows = [r for r in res.records if r.size == K]
        l_row = res.records[-1]
        dK = float(np.mean([r.mse for r in k_rows]))
        dKt = float(np.mean([r.theory_mse for r in k_rows]))
        devK = (dK - dKt) / dKt
        devL = (l_row.mse - l_row.theory_mse) / l_row.theory_mse
        ok = abs(devK) <= cfg.tolerances["mse_rel"] and abs(devL) <= cfg.tolerances["mse_rel"]
        ok_all &= ok
        R = res.rate_binning if res.rate_binning is not None else l_row.rate_theory
        rows.append(SweepRow(p.delta, p.sigma_E2, dKt, l_row.theory_mse, dK, l_row.mse,
                             devK, devL, R, l_row.rate_empirical, ok))
    return rows, ok_all


def write_sweep(rows: Sequence[SweepRow], out_dir, stem: str = "sweep") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([SCHEMA_VERSION, *(_fmt(v) for v in asdict(r).values())])
    return path


# --- binning ------------------------------------------------------------------

def binning_setup(cfg: ExperimentConfig):
    b = dict(cfg.binning or {})
    if not b:
        raise ConfigError("config has no [binning] section")
    p = cfg.scheme
    if "rates" in b:
        rates = [float(r) for r in b.pop("rates")]
    else:
        lo, hi = float(b.pop("R_min", 0.0)), float(b.pop("R_max", 3.5))
        step = float(b.pop("R_step", 0.25))
        rates = list(np.round(np.arange(lo, hi + step / 2, step), 10))
    subsets = b.pop("subsets", None)
    if subsets is None:
        subsets = [s.members for s in codec.enumerate_subsets(p.L) if len(s) >= p.K]
    n_blocks = int(b.pop("blocks", 2000))
    try:
        bc = binning.BinningConfig(
            N=int(b.pop("N", 8)), R_bin=rates[0], seed=int(b.pop("seed", cfg.seed)),
            A=int(b.pop("A", binning.default_clamp(p))), decoder=str(b.pop("decoder", "side_info")),
            radius=float(b.pop("radius", 3.0)), known=tuple(int(k) for k in b.pop("known", ())))
    except binning.BinningConfigError as exc:
        raise ConfigError(str(exc)) from exc
    if b:
        raise ConfigError(f"unknown [binning] keys: {sorted(b)}")
    return bc, rates, [tuple(s) for s in subsets], n_blocks


def run_binning(cfg: ExperimentConfig):
    bc, rates, subsets, n_blocks = binning_setup(cfg)
    try:
        result = binning.rate_sweep(cfg.scheme, bc, rates, subsets, n_blocks=n_blocks)
    except binning.BinningConfigError as exc:
        raise ConfigError(str(exc)) from exc
    ok = True
    window = cfg.tolerances["binning_window"]
    for s in subsets:
        curve = result.curve(s)
        cross = binning.crossing_rate(curve)
        thr = curve[0].theory_threshold
        if bc.known and not math.isnan(cross):
            ok &= abs(cross - thr) <= window
    return result, ok
