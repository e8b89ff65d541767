"""Command-line entry point.

Every flag may also be given as ``key = value`` in a ``--config`` file
(dashes become underscores); flags on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path

import numpy as np

from . import factors as fac
from . import rmt_spectrum as rmt
from . import synth
from . import tensor_factors as tf
from .errors import DomainError, EmptyResultError, InputError, IvsError, NumericError
from .market_data import (
    QUOTE_COLUMNS,
    SurfacePanel,
    load_quotes_csv,
    load_surface_csv,
    smooth_quotes,
    write_surface_csv,
)
from .returns import panel_from_surfaces

logger = logging.getLogger("ivsfactors")

EXIT_OK, EXIT_INPUT, EXIT_EMPTY, EXIT_NUMERIC = 0, 2, 3, 4
SYNTH_KINDS = ("noise", "spike", "factor", "tensor")


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Resolved run settings; ``None`` window means the command's own default."""

    command: str
    input: list = field(default_factory=list)
    universe: list | None = None
    window: str | None = None
    rebalance: str = "monthly"
    weighting: str = "log_oi_vega"
    alpha: float = 0.05
    d: str = "auto"
    d_max: int = 20
    ks_mode: str = "one_sample"
    tensor: bool = False
    grouping: str = "maturity"
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    benchmarks: str | None = None
    top: int = 32
    bins: int = 50
    # synthetic generator settings
    kind: str = "factor"
    n_names: int = 20
    T: int = 250
    maturities: str | None = None
    deltas: str | None = None
    d_true: int = 2
    strength: float = 3.0
    gamma: float = 1.0
    rho: float = 0.5
    zero_prob: float = 0.3

    def validate(self) -> None:
        problems = []
        if not (0 < self.alpha < 0.5):
            problems.append(f"alpha={self.alpha} must lie in (0, 0.5)")
        if self.window not in (None, "year", "all"):
            try:
                if int(self.window) < 30:
                    problems.append(f"window={self.window} must be at least 30 days")
            except ValueError:
                problems.append(f"window={self.window!r} must be 'year', 'all' or an integer")
        if self.weighting not in fac.WEIGHTINGS:
            problems.append(f"weighting={self.weighting!r} must be one of {fac.WEIGHTINGS}")
        if self.d != "auto":
            try:
                if int(self.d) < 0:
                    problems.append(f"d={self.d} must be non-negative")
            except ValueError:
                problems.append(f"d={self.d!r} must be 'auto' or an integer")
        if self.rebalance != "monthly":
            try:
                if int(self.rebalance) < 1:
                    problems.append(f"rebalance={self.rebalance} must be positive")
            except ValueError:
                problems.append(f"rebalance={self.rebalance!r} must be 'monthly' or an integer")
        if self.ks_mode not in ("one_sample", "two_sample"):
            problems.append(f"ks_mode={self.ks_mode!r} must be one_sample or two_sample")
        if self.grouping not in tf.GROUPINGS:
            problems.append(f"grouping={self.grouping!r} must be one of {tf.GROUPINGS}")
        if self.jobs < 1:
            problems.append(f"jobs={self.jobs} must be at least 1")
        if self.top < 1:
            problems.append(f"top={self.top} must be at least 1")
        if self.command == "synth":
            if self.kind not in SYNTH_KINDS:
                problems.append(f"kind={self.kind!r} must be one of {SYNTH_KINDS}")
            if self.n_names < 1:
                problems.append(f"n_names={self.n_names} must be at least 1")
            if self.T < 2:
                problems.append(f"T={self.T} must be at least 2")
            if self.d_true < 0:
                problems.append(f"d_true={self.d_true} must be non-negative")
            if not self.strength > 0:
                problems.append(f"strength={self.strength} must be positive")
            if not self.gamma > 0:
                problems.append(f"gamma={self.gamma} must be positive")
            if not (0 <= self.rho <= 1):
                problems.append(f"rho={self.rho} must lie in [0, 1]")
            if not (0 <= self.zero_prob < 1):
                problems.append(f"zero_prob={self.zero_prob} must lie in [0, 1)")
        if problems:
            raise DomainError("invalid configuration: " + "; ".join(problems))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = _TYPES[key]
    if kind == "bool":
        low = value.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"expected a boolean, got {value!r}")
        return low in ("1", "true", "yes", "on")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if key == "input":
        return [v.strip() for v in value.split(",") if v.strip()]
    if key == "universe":
        return _parse_universe(value)
    return value.strip()


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out, problems = {}, []
    text = Path(path).read_text(encoding="utf-8")
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append((n, f"expected key = value, got {line!r}"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES or key == "command":
            problems.append((n, f"unknown key {key!r}"))
            continue
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            problems.append((n, f"{key}: {exc}"))
    if problems:
        raise InputError(f"{path}: " + "; ".join(f"line {n}: {m}" for n, m in problems),
                         tuple(n for n, _ in problems))
    return out


def _parse_universe(value: str) -> list[str]:
    p = Path(value)
    if p.is_file():
        names = p.read_text(encoding="utf-8").replace(",", "\n").split()
    else:
        names = [v.strip() for v in value.split(",")]
    return [n for n in names if n]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivsfactors", description="Spectral factor analysis of implied-vol surface returns.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("ingest", "smooth raw quotes or validate a surface file"),
        ("spectrum", "MP fit and factor count per window"),
        ("eigenportfolio", "eigenportfolio weights, top contracts and beta alignment"),
        ("track", "sliding-window eigenportfolio against the weighted factor"),
        ("tensor-track", "sliding-window tensor eigenportfolio against the maturity factors"),
        ("synth", "write a synthetic surface file with ground truth"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--input", action="append", help="input CSV (repeatable or comma-separated)")
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--universe", help="comma-separated tickers or a file of tickers")
        p.add_argument("--window", help="year | all | number of return days")
        p.add_argument("--rebalance", help="monthly | number of days")
        p.add_argument("--weighting", choices=fac.WEIGHTINGS)
        p.add_argument("--alpha", type=float)
        p.add_argument("--d", help="auto | fixed factor count")
        p.add_argument("--d-max", type=int)
        p.add_argument("--ks-mode", choices=("one_sample", "two_sample"))
        p.add_argument("--tensor", action="store_const", const=True, default=None)
        p.add_argument("--grouping", choices=tf.GROUPINGS)
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--out")
        p.add_argument("--benchmarks", help="CSV with date,spx_return,vix_return")
        p.add_argument("--top", type=int)
        p.add_argument("--bins", type=int)
        if name == "synth":
            p.add_argument("--kind", choices=SYNTH_KINDS)
            p.add_argument("--n-names", type=int)
            p.add_argument("--T", type=int)
            p.add_argument("--maturities")
            p.add_argument("--deltas")
            p.add_argument("--d-true", type=int)
            p.add_argument("--strength", type=float)
            p.add_argument("--gamma", type=float)
            p.add_argument("--rho", type=float)
            p.add_argument("--zero-prob", type=float)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    for key in _TYPES:
        if key == "command":
            continue
        v = getattr(args, key, None)
        if v is None:
            continue
        if key == "input":
            v = [s.strip() for item in v for s in item.split(",") if s.strip()]
        elif key == "universe":
            v = _parse_universe(v)
        values[key] = v
    cfg = RunConfig(command=args.command, **values)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# Inputs
# --------------------------------------------------------------------------

def _is_quote_file(path: Path) -> bool:
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    return [h.strip() for h in header] == list(QUOTE_COLUMNS)


def load_surfaces(cfg: RunConfig) -> SurfacePanel:
    if not cfg.input:
        raise InputError("no --input given")
    grids = []
    for name in cfg.input:
        path = Path(name)
        if not path.is_file():
            raise InputError(f"input file not found: {path}")
        grids.extend(smooth_quotes(load_quotes_csv(path)) if _is_quote_file(path) else load_surface_csv(path))
    if cfg.universe is not None:
        keep = set(cfg.universe)
        grids = [g for g in grids if g.ticker in keep]
        if not grids:
            raise EmptyResultError("no surfaces left after the universe filter")
    if not grids:
        raise EmptyResultError("input contains no surfaces")
    return SurfacePanel.from_grids(grids).drop_empty_axes()


def load_benchmarks(path, dates) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Benchmark returns aligned to ``dates``; absent columns come back as None."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"benchmark file not found: {path}")
    cols: dict[str, dict] = {"spx_return": {}, "vix_return": {}}
    problems = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = [f.strip() for f in (reader.fieldnames or [])]
        if "date" not in names or any(n not in ("date", *cols) for n in names):
            raise InputError(f"{path}: header must be date[,spx_return][,vix_return]", (1,))
        present = [c for c in cols if c in names]
        for row in reader:
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            try:
                day = np.datetime64(date.fromisoformat(row["date"]), "D")
                for c in present:
                    if row[c] != "":
                        v = float(row[c])
                        if not math.isfinite(v):
                            raise ValueError(f"{c} is not finite")
                        cols[c][day] = v
            except ValueError as exc:
                problems.append((reader.line_num, str(exc)))
    if problems:
        raise InputError(f"{path}: " + "; ".join(f"line {n}: {m}" for n, m in problems[:20]),
                         tuple(n for n, _ in problems))
    out = []
    for c in cols:
        if c not in present:
            out.append(None)
        else:
            out.append(np.array([cols[c].get(d, np.nan) for d in np.asarray(dates, dtype="datetime64[D]")]))
    return out[0], out[1]


def windows(surfaces: SurfacePanel, spec: str) -> list[tuple[str, int, int]]:
    """(label, start, stop) surface-index ranges; returns are dated by the later day."""
    n = len(surfaces.dates)
    if n < 2:
        raise EmptyResultError("need at least two surface dates")
    if spec == "all":
        return [("all", 0, n)]
    rdates = surfaces.dates[1:]
    if spec == "year":
        years = rdates.astype("datetime64[Y]").astype(int) + 1970
        out = []
        for y in np.unique(years):
            idx = np.flatnonzero(years == y)
            out.append((str(int(y)), int(idx[0]), int(idx[-1]) + 2))
        return out
    k = int(spec)
    out = []
    for j in range(0, rdates.size - k + 1, k):
        out.append((f"{rdates[j]}_{rdates[j + k - 1]}", j, j + k + 1))
    if not out:
        raise EmptyResultError(f"fewer than {k} return days in the input")
    return out


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.datetime64):
        return str(obj)
    return obj


def write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n", encoding="utf-8")


def write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _in_window(label: str, fn):
    """Re-raise package errors with the window label prepended."""
    def wrapped(item):
        try:
            return fn(item)
        except IvsError as exc:
            raise type(exc)(f"window {item[0]}: {exc}") from exc
    return wrapped


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> int:
    surfaces = load_surfaces(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    grids = surfaces.to_grids()
    write_surface_csv(grids, out / "surfaces.csv")
    missing = int(np.isnan(surfaces.implied_vol).sum())
    write_json(out / "ingest.json", {
        "dates": len(surfaces.dates), "tickers": list(surfaces.tickers),
        "maturities": list(surfaces.maturities), "deltas": list(surfaces.deltas),
        "first_date": surfaces.dates[0], "last_date": surfaces.dates[-1],
        "missing_points": missing,
    })
    print(f"wrote {len(grids)} surfaces to {out / 'surfaces.csv'}")
    return EXIT_OK


def spectrum_window(surfaces: SurfacePanel, cfg: RunConfig):
    panel = panel_from_surfaces(surfaces)
    if panel.N == 0:
        raise EmptyResultError("no contract has a complete return series")
    report = rmt.svd_panel(panel)
    eigs = report.nonzero_eigenvalues()
    if cfg.d == "auto":
        d_max = min(cfg.d_max, eigs.size - 11)
        sel = rmt.select_factor_count(report, cfg.alpha, d_max, cfg.ks_mode)
        fit, outliers = sel.fit, sel.outlier_count
    else:
        fit = rmt.fit_and_test(eigs, int(cfg.d), report.T, cfg.ks_mode, cfg.alpha)
        outliers = int((eigs > fit.lambda_plus).sum())
    decomp = rmt.decompose(report, fit.d)
    check = rmt.residual_loading_check(decomp, fit, cfg.alpha, cfg.seed)
    summary = fit.report(outliers)
    summary.update({
        "T": report.T, "N": report.N, "dropped_contracts": len(panel.dropped),
        "loading_check": {"statistic": check.statistic, "pvalue": check.pvalue,
                          "reject": check.reject, "N_eff": check.n_eff},
    })
    hist, dens = rmt.histogram_data(eigs[fit.d:], fit, cfg.bins)
    return summary, hist, dens, check, report


def cmd_spectrum(cfg: RunConfig) -> int:
    surfaces = load_surfaces(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    wins = windows(surfaces, cfg.window or "year")

    def run(item):
        label, a, b = item
        return spectrum_window(surfaces.slice_dates(a, b), cfg)

    results = _map_jobs(_in_window("spectrum", run), wins, cfg.jobs)
    index = {}
    for (label, _, _), (summary, hist, dens, check, report) in zip(wins, results):
        write_json(out / f"spectrum_{label}.json", summary)
        write_rows(out / f"histogram_{label}.csv", ("bin_left", "bin_right", "count", "density"), zip(*hist))
        write_rows(out / f"mp_density_{label}.csv", ("x", "density"), zip(*dens))
        write_rows(out / f"eigenvalues_{label}.csv", ("index", "eigenvalue", "log1p"),
                   zip(range(1, report.T + 1), report.eigenvalues, report.log_spectrum))
        n = max(check.residual_spectrum.size, check.synthetic_spectrum.size)
        pad = lambda v: [float(v[i]) if i < v.size else "" for i in range(n)]
        write_rows(out / f"loading_spectra_{label}.csv", ("rank", "residual", "synthetic"),
                   zip(range(1, n + 1), pad(check.residual_spectrum), pad(check.synthetic_spectrum)))
        index[label] = {k: summary[k] for k in ("d", "outlier_count", "N_eff", "pvalue")}
        print(f"{label}: d={summary['d']} outliers={summary['outlier_count']} "
              f"gamma={summary['gamma']:.3f} lambda={summary['lambda']:.3f} N_eff={summary['N_eff']}")
    write_json(out / "spectrum_index.json", index)
    return EXIT_OK


def cmd_eigenportfolio(cfg: RunConfig) -> int:
    surfaces = load_surfaces(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    wins = windows(surfaces, cfg.window or "year")

    def run(item):
        _, a, b = item
        return fac.in_sample_run(surfaces.slice_dates(a, b), cfg.weighting)

    results = _map_jobs(_in_window("eigenportfolio", run), wins, cfg.jobs)
    for (label, _, _), res in zip(wins, results):
        k = min(cfg.top, len(res.contracts))
        top = res.top_table(k)
        write_rows(out / f"top_{label}.csv", ("ticker", "maturity_days", "delta", "beta_over_h2", "avg_oi"),
                   ([r["ticker"], r["maturity_days"], r["delta"], r["beta_over_h2"], r["avg_oi"]] for r in top))
        al = res.alignment
        write_rows(out / f"alignment_{label}.csv",
                   ("rank", "ticker", "maturity_days", "delta", "pi", "beta_over_h2_normalized"),
                   ([n + 1, *res.contracts[i], al.pi_sorted[n], al.target_sorted[n]]
                    for n, i in enumerate(al.order)))
        write_rows(out / f"weights_{label}.csv", ("ticker", "maturity_days", "delta", "weight", "h", "beta"),
                   ([*c, res.portfolio.weights[i], res.portfolio.h[i], res.beta.beta[i]]
                    for i, c in enumerate(res.contracts)))
        write_json(out / f"eigenportfolio_{label}.json", {
            "contracts": len(res.contracts), "spearman": al.spearman, "max_gap_ratio": al.max_gap_ratio,
            "weighting": cfg.weighting, "top_k": k,
        })
        print(f"{label}: {len(res.contracts)} contracts, spearman={al.spearman:.4f}")
    return EXIT_OK


def _track_window(cfg: RunConfig) -> int:
    w = cfg.window or "126"
    if w in ("year", "all"):
        raise DomainError("tracking needs a sliding window length in days")
    return int(w)


def _write_track(out: Path, surfaces: SurfacePanel, run: fac.FactorRun, cfg: RunConfig,
                 extra_cols: dict | None = None, windows_info=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    eq = vx = None
    if cfg.benchmarks:
        eq, vx = load_benchmarks(cfg.benchmarks, run.dates)
    all_dates = surfaces.dates
    base = all_dates[np.searchsorted(all_dates, run.dates[0]) - 1]
    dates = np.concatenate([[base], run.dates])
    cols = {"eigenportfolio": run.ep_index, "factor": run.factor_index}
    for name, levels in (extra_cols or {}).items():
        cols[name] = levels
    if vx is not None:
        cols["vix"] = fac.compound_index(np.where(np.isfinite(vx), vx, 0.0))
    write_rows(out / "index_levels.csv", ("date", *cols),
               ([str(d), *(float(c[i]) for c in cols.values())] for i, d in enumerate(dates)))
    write_rows(out / "daily_returns.csv", ("date", "eigenportfolio", "factor"),
               zip((str(d) for d in run.dates), run.ep_returns, run.factor_returns))
    regs = fac.period_regressions(run.dates, run.ep_returns, run.factor_returns, eq, vx)
    payload = {
        "weighting": run.weighting, "window": _track_window(cfg), "rebalance": cfg.rebalance,
        "first_date": run.dates[0], "last_date": run.dates[-1], "days": run.dates.size,
        "rebalances": len(run.rebalances), "skipped_windows": run.skipped,
        "periods": {k: v.as_dict() for k, v in regs.items()},
    }
    write_json(out / "regression.json", payload)
    if windows_info is not None:
        write_json(out / "windows.json", windows_info)
    one = regs["all"].one_factor
    print(f"{out}: beta={one.coef[1]:.4f} (t={one.tstat[1]:.2f}) alpha={one.coef[0]:.3g} R2={one.r2:.4f}")
    return payload


def run_flat_track(surfaces: SurfacePanel, cfg: RunConfig, out: Path):
    run = fac.sliding_window_run(surfaces, _track_window(cfg), cfg.rebalance, cfg.weighting)
    return _write_track(out, surfaces, run, cfg)


def run_tensor_track(surfaces: SurfacePanel, cfg: RunConfig, out: Path):
    run = tf.tensor_tracking_run(surfaces, _track_window(cfg), cfg.rebalance, cfg.weighting, cfg.grouping)
    per = run.extra["per_group"]
    per = per.reshape(per.shape[0], -1)
    if cfg.grouping == "maturity":
        names = [f"Q_{m}" for m in surfaces.maturities]
    elif cfg.grouping == "maturity_delta":
        names = [f"Q_{m}_{d}" for m in surfaces.maturities for d in surfaces.deltas]
    else:
        names = ["Q_all"]
    extra = {n: fac.compound_index(per[:, j]) for j, n in enumerate(names)}
    info = [{"date": r.date, "contracts": r.n_contracts, **r.info} for r in run.rebalances]
    return _write_track(out, surfaces, run, cfg, extra, info)


def cmd_track(cfg: RunConfig) -> int:
    surfaces = load_surfaces(cfg)
    out = Path(cfg.out)
    jobs = [("flat", run_flat_track)]
    if cfg.tensor:
        jobs.append(("tensor", run_tensor_track))
    _map_jobs(lambda job: job[1](surfaces, cfg, out if job[0] == "flat" else out / "tensor"), jobs, cfg.jobs)
    return EXIT_OK


def cmd_tensor_track(cfg: RunConfig) -> int:
    surfaces = load_surfaces(cfg)
    run_tensor_track(surfaces, cfg, Path(cfg.out))
    return EXIT_OK


def _labels(text: str | None, default):
    if text is None:
        return None
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise DomainError(f"grid labels must be integers, got {text!r}") from exc


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mats, dels = _labels(cfg.maturities, None), _labels(cfg.deltas, None)
    truth: dict = {"kind": cfg.kind, "seed": cfg.seed, "n_names": cfg.n_names, "T": cfg.T}
    if cfg.kind in ("noise", "spike"):
        m = mats or synth.MATURITIES
        d = dels or synth.DELTAS
        n = cfg.n_names * len(m) * len(d)
        spec = synth.SpikeSpec(n, cfg.T, cfg.d_true if cfg.kind == "spike" else 0, cfg.strength,
                               cfg.gamma, cfg.seed)
        sp = synth.gen_spike_panel(spec)
        surfaces = synth.panel_market(sp.matrix, cfg.n_names, m, d, seed=cfg.seed + 1)
        truth.update({"N": n, "d": spec.d, "strength": cfg.strength, "gamma": cfg.gamma, "edge": sp.edge})
        if spec.d:
            write_rows(out / "truth_factors.csv", ("ticker", "maturity_days", "delta",
                                                   *(f"f{i + 1}" for i in range(spec.d))),
                       ([*c, *sp.factors[i]] for i, c in enumerate(surfaces.contracts())))
    elif cfg.kind == "factor":
        fm = synth.gen_factor_market(synth.FactorMarketSpec(
            n_names=cfg.n_names, T=cfg.T, maturities=mats, deltas=dels,
            oi=synth.OiSpec(zero_prob=cfg.zero_prob), seed=cfg.seed))
        surfaces = fm.surfaces
        write_rows(out / "truth_factor.csv", ("date", "factor_return"),
                   zip((str(x) for x in surfaces.dates[1:]), fm.factor_returns))
        write_rows(out / "truth_contracts.csv", ("ticker", "maturity_days", "delta", "beta", "idio_std"),
                   ([*c, b, s] for c, b, s in zip(surfaces.contracts(), fm.beta.ravel(), fm.idio_std.ravel())))
    else:
        tm = synth.gen_tensor_market(synth.TensorMarketSpec(
            n_names=cfg.n_names, T=cfg.T, maturities=mats, deltas=dels, rho=cfg.rho,
            oi=synth.OiSpec(zero_prob=cfg.zero_prob), seed=cfg.seed))
        surfaces = tm.surfaces
        write_rows(out / "truth_factor.csv", ("date", *(f"Q_{m}" for m in surfaces.maturities)),
                   ([str(x), *tm.maturity_factors[:, t]] for t, x in enumerate(surfaces.dates[1:])))
        write_rows(out / "truth_contracts.csv", ("ticker", "maturity_days", "delta", "beta", "idio_std"),
                   ([*c, b, s] for c, b, s in zip(surfaces.contracts(), tm.beta.ravel(), tm.idio_std.ravel())))
        truth["rho"] = cfg.rho
    write_surface_csv(surfaces.to_grids(), out / "surfaces.csv")
    truth.update({"maturities": list(surfaces.maturities), "deltas": list(surfaces.deltas)})
    write_json(out / "truth.json", truth)
    print(f"wrote {out / 'surfaces.csv'}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "spectrum": cmd_spectrum,
    "eigenportfolio": cmd_eigenportfolio,
    "track": cmd_track,
    "tensor-track": cmd_tensor_track,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except EmptyResultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IvsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
