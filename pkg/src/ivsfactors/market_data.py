"""Option-level ingestion: OI bucketing, kernel smoothing and surface CSV I/O.

Deltas are carried in signed percent labels at the boundary (puts negative,
e.g. -20 for a 20-delta put) and converted to fractional call-equivalent
delta (``1 + put delta`` for puts) wherever a distance is taken.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InputError, SmoothingError

logger = logging.getLogger(__name__)

MATURITIES: tuple[int, ...] = (30, 60, 91, 122, 152, 182, 273, 365)
DELTAS: tuple[int, ...] = (-20, -30, -40, 50, 40, 30, 20)
GRID_POINTS: tuple[tuple[int, int], ...] = tuple((m, d) for m in MATURITIES for d in DELTAS)

# (bucket, min, max) in days; the last bucket is open-ended.
TAU_BUCKETS: tuple[tuple[int, int, float], ...] = (
    (30, 1, 45),
    (60, 46, 75),
    (91, 76, 106),
    (122, 107, 137),
    (152, 138, 167),
    (182, 168, 227),
    (273, 228, 319),
    (365, 320, math.inf),
)

# Integer-percent ranges after rounding half away from zero. The published
# put ranges overlap by one point at each boundary; ties go to the bucket
# that mirrors the call side (e.g. -25 -> -30, like 25 -> 30).
DELTA_BUCKETS: tuple[tuple[int, int, int], ...] = (
    (-20, -24, -1),
    (-30, -34, -25),
    (-40, -45, -35),
    (50, 45, 54),
    (40, 35, 44),
    (30, 25, 34),
    (20, 1, 24),
)

BANDWIDTHS = (0.05, 0.005, 0.001)

SURFACE_COLUMNS = (
    "date",
    "ticker",
    "maturity_days",
    "delta_bucket",
    "implied_vol",
    "open_interest",
    "vega",
    "underlying_price",
)
QUOTE_COLUMNS = (
    "date",
    "ticker",
    "tau_days",
    "call_equiv_delta",
    "cp_flag",
    "implied_vol",
    "vega",
    "open_interest",
    "underlying_price",
)


def bucket_tau(tau: int) -> int:
    """Maturity bucket (days) for an option with ``tau`` days to expiry."""
    if tau < 1:
        raise DomainError(f"days to expiry must be >= 1, got {tau}")
    for bucket, lo, hi in TAU_BUCKETS:
        if lo <= tau <= hi:
            return bucket
    raise DomainError(f"days to expiry {tau} falls between buckets")


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def bucket_delta(delta: float) -> int | None:
    """Delta bucket for a signed percent delta, or None if outside every range."""
    if not math.isfinite(delta):
        return None
    d = _round_half_away(delta)
    for bucket, lo, hi in DELTA_BUCKETS:
        if lo <= d <= hi:
            return bucket
    return None


def to_call_equivalent(delta_pct):
    """Signed percent delta -> fractional call-equivalent delta."""
    d = np.asarray(delta_pct, dtype=float) / 100.0
    out = np.where(d < 0, 1.0 + d, d)
    return float(out) if out.ndim == 0 else out


def grid_cp_flag(delta_bucket: int) -> str:
    """Option type a grid column is quoted on (puts for negative labels)."""
    return "P" if delta_bucket < 0 else "C"


def _parse_cp(flag: str) -> str:
    f = flag.strip().upper()
    if f in ("C", "CALL"):
        return "C"
    if f in ("P", "PUT"):
        return "P"
    raise ValueError(f"unknown call/put flag {flag!r}")


@dataclass(frozen=True)
class RawOptionQuote:
    date: date
    ticker: str
    tau: int
    call_equiv_delta: float
    implied_vol: float
    vega: float
    open_interest: int
    cp_flag: str
    underlying_price: float

    def __post_init__(self):
        if self.tau < 1:
            raise DomainError(f"tau must be >= 1, got {self.tau}")
        if not (math.isfinite(self.implied_vol) and self.implied_vol > 0):
            raise DomainError(f"implied vol must be finite and positive, got {self.implied_vol}")
        if not (math.isfinite(self.vega) and self.vega >= 0):
            raise DomainError(f"vega must be finite and non-negative, got {self.vega}")
        if self.open_interest < 0 or int(self.open_interest) != self.open_interest:
            raise DomainError(f"open interest must be a non-negative integer, got {self.open_interest}")
        if not (self.underlying_price > 0):
            raise DomainError(f"underlying price must be positive, got {self.underlying_price}")
        object.__setattr__(self, "cp_flag", _parse_cp(self.cp_flag))


@dataclass
class SurfaceGrid:
    """One name's 8x7 surface on one day; missing points carry NaN vol."""

    date: date
    ticker: str
    implied_vol: np.ndarray
    open_interest: np.ndarray
    vega: np.ndarray
    underlying_price: float

    @property
    def missing(self) -> np.ndarray:
        return ~np.isfinite(self.implied_vol)


@dataclass
class OpenInterestGrid:
    oi: np.ndarray  # (len(MATURITIES), len(DELTAS)) int64
    dropped: int = 0

    def __getitem__(self, point: tuple[int, int]) -> int:
        m, d = point
        return int(self.oi[MATURITIES.index(m), DELTAS.index(d)])

    @property
    def total(self) -> int:
        return int(self.oi.sum())


def aggregate_open_interest(quotes: Sequence[RawOptionQuote], day=None, ticker=None) -> OpenInterestGrid:
    """Sum open interest of the quotes falling in each of the 56 grid buckets.

    Quotes whose delta is outside every bucket are counted in ``dropped``.
    """
    grid = np.zeros((len(MATURITIES), len(DELTAS)), dtype=np.int64)
    dropped = 0
    for q in quotes:
        if (day is not None and q.date != day) or (ticker is not None and q.ticker != ticker):
            raise DomainError("quotes must share the same date and ticker")
        db = bucket_delta(q.call_equiv_delta)
        if db is None:
            dropped += q.open_interest
            continue
        grid[MATURITIES.index(bucket_tau(q.tau)), DELTAS.index(db)] += q.open_interest
    return OpenInterestGrid(grid, dropped)


def _log_kernel(quotes: Sequence[RawOptionQuote], tau_days: float, delta_pct: float, cp: str,
                bandwidths=BANDWIDTHS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h1, h2, h3 = bandwidths
    taus = np.array([q.tau for q in quotes], dtype=float)
    ce = to_call_equivalent(np.array([q.call_equiv_delta for q in quotes], dtype=float))
    cps = np.array([q.cp_flag for q in quotes])
    x = np.log(taus / tau_days)
    y = np.atleast_1d(ce) - to_call_equivalent(delta_pct)
    # z = 0 for a matching call/put flag, 1 otherwise.
    z = (cps != _parse_cp(cp)).astype(float)
    logphi = -(x**2 / (2 * h1) + y**2 / (2 * h2) + z**2 / (2 * h3))
    vols = np.array([q.implied_vol for q in quotes], dtype=float)
    vegas = np.array([q.vega for q in quotes], dtype=float)
    return logphi, vols, vegas


def kernel_smooth(quotes: Sequence[RawOptionQuote], target: tuple[float, float, str],
                  bandwidths=BANDWIDTHS) -> float:
    """Vega-weighted Gaussian kernel average of quote vols at one grid target.

    ``target`` is ``(days, signed percent delta, cp flag)``. Kernel exponents
    are shifted by their maximum before exponentiating, which leaves the
    ratio unchanged but avoids 0/0 when every raw weight underflows.
    """
    if not quotes:
        raise SmoothingError("no quotes to smooth")
    tau_j, delta_j, cp_j = target
    logphi, vols, vegas = _log_kernel(quotes, tau_j, delta_j, cp_j, bandwidths)
    live = vegas > 0
    if not live.any():
        raise SmoothingError(f"no quote with positive vega for target {target}")
    shift = logphi[live].max()
    w = vegas * np.exp(logphi - shift)
    den = w.sum()
    if not np.isfinite(den) or den <= 0:
        raise SmoothingError(f"kernel denominator {den} at target {target}")
    return float((w * vols).sum() / den)


def _kernel_mean(quotes, target, values, bandwidths=BANDWIDTHS) -> float:
    logphi, _, _ = _log_kernel(quotes, target[0], target[1], target[2], bandwidths)
    w = np.exp(logphi - logphi.max())
    return float((w * values).sum() / w.sum())


def smooth_surface(quotes: Sequence[RawOptionQuote], bandwidths=BANDWIDTHS) -> SurfaceGrid:
    """Build a SurfaceGrid from one name's quotes on one day.

    Vol comes from :func:`kernel_smooth`; grid vega is the plain kernel
    average of quote vegas; OI is bucketed. Points the smoother cannot
    resolve are left missing.
    """
    if not quotes:
        raise InputError("empty quote list")
    day, ticker = quotes[0].date, quotes[0].ticker
    oi = aggregate_open_interest(quotes, day, ticker)
    iv = np.full((len(MATURITIES), len(DELTAS)), np.nan)
    vega = np.full_like(iv, np.nan)
    qvegas = np.array([q.vega for q in quotes], dtype=float)
    for a, m in enumerate(MATURITIES):
        for b, d in enumerate(DELTAS):
            target = (m, d, grid_cp_flag(d))
            try:
                iv[a, b] = kernel_smooth(quotes, target, bandwidths)
            except SmoothingError as exc:
                logger.warning("%s %s: %s", day, ticker, exc)
                continue
            vega[a, b] = _kernel_mean(quotes, target, qvegas, bandwidths)
    spot = float(np.median([q.underlying_price for q in quotes]))
    return SurfaceGrid(day, ticker, iv, oi.oi, vega, spot)


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

def _check_header(fieldnames, expected, path):
    if fieldnames is None:
        raise InputError(f"{path}: empty file or missing header", (1,))
    got = [f.strip() for f in fieldnames]
    missing = [c for c in expected if c not in got]
    extra = [c for c in got if c not in expected]
    if missing or extra or len(got) != len(set(got)):
        raise InputError(f"{path}: malformed header, missing={missing} unexpected={extra}", (1,))


def _finite(text: str, name: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"{name} is not finite")
    return v


def _integer(text: str, name: str) -> int:
    v = float(text)
    if not math.isfinite(v) or v != int(v):
        raise ValueError(f"{name} must be an integer, got {text!r}")
    return int(v)


def load_surface_csv(path) -> list[SurfaceGrid]:
    """Read a gridded surface file; one row per date x ticker x grid point.

    Every bad row is reported (with its line number) in a single InputError.
    Grid points absent from the file are left missing.
    """
    path = Path(path)
    problems: list[tuple[int, str]] = []
    cited: set[int] = set()
    seen: dict[tuple, int] = {}
    cells: dict[tuple[date, str], dict] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, SURFACE_COLUMNS, path)
        for row in reader:
            line = reader.line_num
            try:
                row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
                day = date.fromisoformat(row["date"])
                ticker = row["ticker"]
                if not ticker:
                    raise ValueError("empty ticker")
                mat = _integer(row["maturity_days"], "maturity_days")
                dlt = _integer(row["delta_bucket"], "delta_bucket")
                if mat not in MATURITIES:
                    raise ValueError(f"maturity {mat} is not a grid maturity")
                if dlt not in DELTAS:
                    raise ValueError(f"delta {dlt} is not a grid delta")
                iv = _finite(row["implied_vol"], "implied_vol")
                if iv <= 0:
                    raise ValueError(f"implied_vol must be positive, got {iv}")
                oi = _integer(row["open_interest"], "open_interest")
                if oi < 0:
                    raise ValueError(f"open_interest must be non-negative, got {oi}")
                vg = _finite(row["vega"], "vega")
                if vg < 0:
                    raise ValueError(f"vega must be non-negative, got {vg}")
                spot = _finite(row["underlying_price"], "underlying_price")
                if spot <= 0:
                    raise ValueError(f"underlying_price must be positive, got {spot}")
            except (ValueError, KeyError, TypeError) as exc:
                problems.append((line, str(exc)))
                continue
            key = (day, ticker, mat, dlt)
            if key in seen:
                problems.append((line, f"duplicate key {key} (first at line {seen[key]})"))
                cited.add(seen[key])
                continue
            seen[key] = line
            cell = cells.setdefault((day, ticker), {"points": {}, "spot": spot, "line": line})
            if not math.isclose(cell["spot"], spot, rel_tol=1e-12):
                problems.append((line, f"underlying_price {spot} disagrees with line {cell['line']}"))
                continue
            cell["points"][(mat, dlt)] = (iv, oi, vg)
    if problems:
        lines = tuple(sorted({n for n, _ in problems} | cited))
        detail = "; ".join(f"line {n}: {msg}" for n, msg in problems[:20])
        raise InputError(f"{path}: {len(problems)} invalid row(s): {detail}", lines)
    grids = []
    for (day, ticker) in sorted(cells):
        cell = cells[(day, ticker)]
        iv = np.full((len(MATURITIES), len(DELTAS)), np.nan)
        oi = np.zeros(iv.shape, dtype=np.int64)
        vg = np.full(iv.shape, np.nan)
        for (m, d), (v, o, g) in cell["points"].items():
            a, b = MATURITIES.index(m), DELTAS.index(d)
            iv[a, b], oi[a, b], vg[a, b] = v, o, g
        grids.append(SurfaceGrid(day, ticker, iv, oi, vg, cell["spot"]))
    return grids


def write_surface_csv(grids: Iterable[SurfaceGrid], path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURFACE_COLUMNS)
        for g in grids:
            for a, m in enumerate(MATURITIES):
                for b, d in enumerate(DELTAS):
                    iv = g.implied_vol[a, b]
                    if not np.isfinite(iv):
                        continue
                    w.writerow([g.date.isoformat(), g.ticker, m, d, repr(float(iv)),
                                int(g.open_interest[a, b]), repr(float(g.vega[a, b])),
                                repr(float(g.underlying_price))])


def load_quotes_csv(path) -> list[RawOptionQuote]:
    path = Path(path)
    quotes, problems = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, QUOTE_COLUMNS, path)
        for row in reader:
            try:
                row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
                quotes.append(RawOptionQuote(
                    date=date.fromisoformat(row["date"]),
                    ticker=row["ticker"],
                    tau=_integer(row["tau_days"], "tau_days"),
                    call_equiv_delta=_finite(row["call_equiv_delta"], "call_equiv_delta"),
                    implied_vol=_finite(row["implied_vol"], "implied_vol"),
                    vega=_finite(row["vega"], "vega"),
                    open_interest=_integer(row["open_interest"], "open_interest"),
                    cp_flag=row["cp_flag"],
                    underlying_price=_finite(row["underlying_price"], "underlying_price"),
                ))
            except (ValueError, KeyError, TypeError) as exc:
                problems.append((reader.line_num, str(exc)))
    if problems:
        detail = "; ".join(f"line {n}: {msg}" for n, msg in problems[:20])
        raise InputError(f"{path}: {len(problems)} invalid row(s): {detail}",
                         tuple(n for n, _ in problems))
    return quotes


def smooth_quotes(quotes: Sequence[RawOptionQuote], bandwidths=BANDWIDTHS) -> list[SurfaceGrid]:
    """Group quotes by (date, ticker) and smooth each group onto the grid."""
    groups: dict[tuple[date, str], list[RawOptionQuote]] = {}
    for q in quotes:
        groups.setdefault((q.date, q.ticker), []).append(q)
    return [smooth_surface(groups[k], bandwidths) for k in sorted(groups)]


# --------------------------------------------------------------------------
# Stacked panel of surfaces
# --------------------------------------------------------------------------

@dataclass
class SurfacePanel:
    """Surfaces stacked into (date, name, maturity, delta) arrays.

    Missing points hold NaN in ``implied_vol`` and ``vega`` and 0 in
    ``open_interest``. ``underlying`` is (date, name).
    """

    dates: np.ndarray
    tickers: tuple[str, ...]
    implied_vol: np.ndarray
    open_interest: np.ndarray
    vega: np.ndarray
    underlying: np.ndarray
    maturities: tuple[int, ...] = MATURITIES
    deltas: tuple[int, ...] = DELTAS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.tickers = tuple(self.tickers)
        shape = (len(self.dates), len(self.tickers), len(self.maturities), len(self.deltas))
        for name in ("implied_vol", "open_interest", "vega"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise DomainError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)
        self.underlying = np.asarray(self.underlying, dtype=float)
        if self.underlying.shape != shape[:2]:
            raise DomainError(f"underlying has shape {self.underlying.shape}, expected {shape[:2]}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.implied_vol.shape

    @property
    def n_contracts(self) -> int:
        return int(np.prod(self.shape[1:]))

    def contracts(self) -> list[tuple[str, int, int]]:
        """Contract labels in flattening order: name, then maturity, then delta."""
        return [(t, m, d) for t in self.tickers for m in self.maturities for d in self.deltas]

    @classmethod
    def from_grids(cls, grids: Sequence[SurfaceGrid]) -> "SurfacePanel":
        if not grids:
            raise InputError("no surfaces to stack")
        dates = sorted({g.date for g in grids})
        tickers = sorted({g.ticker for g in grids})
        di = {d: i for i, d in enumerate(dates)}
        ti = {t: i for i, t in enumerate(tickers)}
        shape = (len(dates), len(tickers), len(MATURITIES), len(DELTAS))
        iv = np.full(shape, np.nan)
        vg = np.full(shape, np.nan)
        oi = np.zeros(shape, dtype=np.int64)
        spot = np.full(shape[:2], np.nan)
        for g in grids:
            a, b = di[g.date], ti[g.ticker]
            iv[a, b], vg[a, b], oi[a, b] = g.implied_vol, g.vega, g.open_interest
            spot[a, b] = g.underlying_price
        return cls(np.array(dates, dtype="datetime64[D]"), tuple(tickers), iv, oi, vg, spot)

    def to_grids(self) -> list[SurfaceGrid]:
        """Unstack into full 8x7 grids; axes absent from the panel come out missing."""
        rows = [MATURITIES.index(m) for m in self.maturities]
        cols = [DELTAS.index(d) for d in self.deltas]
        ix = np.ix_(rows, cols)
        out = []
        for a, d in enumerate(self.dates):
            day = d.astype(object)
            for b, t in enumerate(self.tickers):
                if not np.isfinite(self.implied_vol[a, b]).any():
                    continue
                iv = np.full((len(MATURITIES), len(DELTAS)), np.nan)
                vg = np.full_like(iv, np.nan)
                oi = np.zeros(iv.shape, dtype=np.int64)
                iv[ix], vg[ix], oi[ix] = self.implied_vol[a, b], self.vega[a, b], self.open_interest[a, b]
                out.append(SurfaceGrid(day, t, iv, oi, vg, float(self.underlying[a, b])))
        return out

    def drop_empty_axes(self) -> "SurfacePanel":
        """Remove maturities and deltas that are missing for every date and name."""
        present = np.isfinite(self.implied_vol).any(axis=(0, 1))
        mk = [j for j in range(len(self.maturities)) if present[j].any()]
        dk = [k for k in range(len(self.deltas)) if present[:, k].any()]
        sel = (slice(None), slice(None), np.array(mk)[:, None], np.array(dk)[None, :])
        return SurfacePanel(self.dates, self.tickers, self.implied_vol[sel], self.open_interest[sel],
                            self.vega[sel], self.underlying,
                            tuple(self.maturities[j] for j in mk), tuple(self.deltas[k] for k in dk),
                            dict(self.meta))

    def select_tickers(self, tickers: Iterable[str]) -> "SurfacePanel":
        keep = [i for i, t in enumerate(self.tickers) if t in set(tickers)]
        return SurfacePanel(self.dates, tuple(self.tickers[i] for i in keep),
                            self.implied_vol[:, keep], self.open_interest[:, keep],
                            self.vega[:, keep], self.underlying[:, keep],
                            self.maturities, self.deltas, dict(self.meta))

    def slice_dates(self, start: int, stop: int) -> "SurfacePanel":
        s = slice(start, stop)
        return SurfacePanel(self.dates[s], self.tickers, self.implied_vol[s], self.open_interest[s],
                            self.vega[s], self.underlying[s], self.maturities, self.deltas,
                            dict(self.meta))
