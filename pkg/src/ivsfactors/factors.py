"""Eigenportfolios, open-interest weighted factor indices and tracking regressions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DomainError, EmptyResultError, InsufficientDataError, NumericError
from .market_data import SurfacePanel
from .returns import raw_returns, standardize
from .rmt_spectrum import SpectrumReport, svd_panel

logger = logging.getLogger(__name__)

WEIGHTINGS = ("plain_oi", "log_oi_vega")
NORMALIZER_TOL = 1e-12
MAX_CONDITION = 1e12


# --------------------------------------------------------------------------
# Weights and factor indices
# --------------------------------------------------------------------------

def unitless_vega(sigma, vega, underlying):
    """Dollar vega per unit of underlying price, scaled by implied vol."""
    underlying = np.asarray(underlying, dtype=float)
    if np.any(~(underlying > 0)):
        raise DomainError("underlying price must be positive")
    out = np.asarray(sigma, dtype=float) * np.asarray(vega, dtype=float) / underlying
    return float(out) if out.ndim == 0 else out


def weight(spec: str, oi, vega_untls=None):
    """Weighting function applied to open interest (and unitless vega)."""
    oi = np.asarray(oi, dtype=float)
    if spec == "plain_oi":
        out = oi
    elif spec == "log_oi_vega":
        if vega_untls is None:
            raise DomainError("log_oi_vega weighting needs unitless vega")
        out = np.log1p(oi) * np.asarray(vega_untls, dtype=float)
    else:
        raise DomainError(f"unknown weighting {spec!r}; expected one of {WEIGHTINGS}")
    return float(out) if out.ndim == 0 else out


def weight_panel(surfaces: SurfacePanel, spec: str) -> np.ndarray:
    """Per-day weights shaped like the surface arrays; missing points weigh 0."""
    if spec == "plain_oi":
        w = surfaces.open_interest.astype(float)
    else:
        spot = surfaces.underlying[:, :, None, None]
        with np.errstate(invalid="ignore"):
            vu = np.where(spot > 0, surfaces.implied_vol * surfaces.vega / np.where(spot > 0, spot, 1.0),
                          np.nan)
        w = weight(spec, surfaces.open_interest, vu)
    return np.where(np.isfinite(w), w, 0.0)


def compound_index(returns) -> np.ndarray:
    """Levels ``Q(0)=1, Q(t+1) = Q(t)(1 + r(t))``."""
    r = np.asarray(returns, dtype=float)
    if np.any(r <= -1):
        bad = int(np.flatnonzero(r <= -1)[0])
        raise DomainError(f"return {r[bad]} at step {bad} wipes out the index")
    return np.concatenate([[1.0], np.cumprod(1.0 + r)])


@dataclass
class FactorSeries:
    returns: np.ndarray
    levels: np.ndarray
    weighting: str
    normalizers: np.ndarray
    dates: np.ndarray | None = None


def oi_factor_returns(returns, weights, dates=None, weighting: str = "custom") -> FactorSeries:
    """Weighted cross-sectional mean return per day.

    ``returns`` and ``weights`` are N x T (contracts by days); weights may
    vary by day. Contracts with a missing return drop out of that day.
    """
    r = np.asarray(returns, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), r.shape)
    if np.any(w < 0):
        raise DomainError("weights must be non-negative")
    live = np.isfinite(r) & np.isfinite(w)
    w = np.where(live, w, 0.0)
    norm = w.sum(axis=0)
    num = (w * np.where(live, r, 0.0)).sum(axis=0)
    bad = np.flatnonzero(~(norm > NORMALIZER_TOL))
    if bad.size:
        day = bad[0] if dates is None else dates[bad[0]]
        raise NumericError(f"factor weights sum to zero on day {day}")
    f = num / norm
    return FactorSeries(f, compound_index(f), weighting, norm, None if dates is None else np.asarray(dates))


@dataclass
class BetaVector:
    beta: np.ndarray
    h_q2: float
    residuals: np.ndarray | None = None


def betas(returns, factor) -> BetaVector:
    """Sample betas of each row of ``returns`` (N x T) on the factor returns."""
    r = np.atleast_2d(np.asarray(returns, dtype=float))
    f = np.asarray(getattr(factor, "returns", factor), dtype=float)
    t = f.size
    if t < 3:
        raise InsufficientDataError(f"betas need at least 3 observations, got {t}")
    if r.shape[1] != t:
        raise DomainError(f"returns have {r.shape[1]} days, factor has {t}")
    fc = f - f.mean()
    var = fc @ fc / (t - 1)
    if not (var > 0):
        raise NumericError("factor returns have zero variance")
    rc = r - r.mean(axis=1, keepdims=True)
    beta = (rc @ fc) / (t - 1) / var
    return BetaVector(beta, float(var), rc - beta[:, None] * fc)


# --------------------------------------------------------------------------
# Eigenportfolio
# --------------------------------------------------------------------------

def _normalize(raw: np.ndarray, what: str) -> np.ndarray:
    s = raw.sum()
    if abs(s) <= NORMALIZER_TOL:
        raise NumericError(f"{what} weights sum to {s:.3g}; cannot normalize")
    return raw / s


@dataclass
class Eigenportfolio:
    weights: np.ndarray
    u1: np.ndarray
    h: np.ndarray
    orthogonal: np.ndarray | None = None
    contracts: list = field(default_factory=list)

    def returns(self, raw) -> np.ndarray:
        """Portfolio returns from raw (un-standardized) N x T returns."""
        return self.weights @ np.asarray(raw, dtype=float)


def orthogonal_portfolio(u_tilde, h) -> np.ndarray:
    """Weights ``h^-1 u~`` for a direction orthogonal to ``u1``.

    Normalized to unit sum when possible; zero-sum directions are returned
    unscaled since neutrality does not depend on scale.
    """
    raw = np.asarray(u_tilde, dtype=float) / np.asarray(h, dtype=float)
    s = raw.sum()
    return raw / s if abs(s) > NORMALIZER_TOL else raw


def eigenportfolio(report: SpectrumReport, h, u_tilde=None, contracts: Sequence | None = None) -> Eigenportfolio:
    """``pi_1 = h^-1 u_1 / sum(h^-1 u_1)`` from the top left singular vector."""
    h = np.asarray(h, dtype=float)
    if h.shape != (report.N,):
        raise DomainError(f"h has shape {h.shape}, expected ({report.N},)")
    if np.any(~(h > 0)):
        raise DomainError("standard deviations must be positive")
    s = report.singular_values
    if s.size > 1 and not (s[0] - s[1] > 1e-12 * s[0]):
        raise NumericError(f"top singular value is not simple (S11={s[0]:.6g}, S22={s[1]:.6g})")
    u1 = report.U[:, 0]
    pi = _normalize(u1 / h, "eigenportfolio")
    ortho = None if u_tilde is None else orthogonal_portfolio(u_tilde, h)
    return Eigenportfolio(pi, u1.copy(), h, ortho, list(contracts) if contracts is not None else [])


@dataclass
class AlignmentRecord:
    order: np.ndarray
    pi_sorted: np.ndarray
    target_sorted: np.ndarray
    spearman: float
    max_gap_ratio: float


def sorted_alignment(pi, beta, h) -> AlignmentRecord:
    """Sort ``pi`` descending and carry ``h^-2 beta`` (unit sum) along.

    ``max_gap_ratio`` is the largest pointwise gap between the two sorted
    curves relative to the range of ``pi``.
    """
    pi = np.asarray(pi, dtype=float)
    beta = np.asarray(beta, dtype=float)
    h = np.asarray(h, dtype=float)
    if not (pi.shape == beta.shape == h.shape):
        raise DomainError("pi, beta and h must have the same length")
    if np.any(~(h > 0)):
        raise DomainError("standard deviations must be positive")
    target = beta / h**2
    target = _normalize(target, "beta/h^2")
    order = np.argsort(-pi, kind="stable")
    rho = float(stats.spearmanr(pi, target)[0]) if pi.size > 1 else 1.0
    span = pi.max() - pi.min()
    gap = np.abs(pi[order] - target[order]).max()
    ratio = float(gap / span) if span > 0 else (0.0 if gap == 0 else float("inf"))
    return AlignmentRecord(order, pi[order], target[order], rho, ratio)


def tracking_error_ratio(ep_returns, factor_returns) -> float:
    """``var(ep - c f) / var(ep)`` with ``c`` the least-squares slope."""
    ep = np.asarray(ep_returns, dtype=float)
    f = np.asarray(factor_returns, dtype=float)
    fc = f - f.mean()
    c = (ep - ep.mean()) @ fc / (fc @ fc)
    return float(np.var(ep - c * f, ddof=1) / np.var(ep, ddof=1))


# --------------------------------------------------------------------------
# Regressions
# --------------------------------------------------------------------------

@dataclass
class OlsFit:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    r2: float
    n: int
    residuals: np.ndarray

    def as_dict(self) -> dict:
        out = {"n": self.n, "r2": self.r2}
        for name, c, t in zip(self.names, self.coef, self.tstat):
            out[name] = float(c)
            out[f"{name}_t"] = float(t)
        return out


def ols(y, regressors: dict) -> OlsFit:
    """OLS with intercept and classical standard errors."""
    y = np.asarray(y, dtype=float)
    names = ("alpha", *regressors)
    x = np.column_stack([np.ones_like(y), *(np.asarray(v, dtype=float) for v in regressors.values())])
    n, k = x.shape
    if n <= k:
        raise InsufficientDataError(f"{n} observations for {k} coefficients")
    scale = np.linalg.norm(x, axis=0)
    if np.any(scale == 0) or np.linalg.cond(x / scale) > MAX_CONDITION:
        raise NumericError("regressors are collinear (condition number above 1e12)")
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    # sums of squares at roundoff level are exact zeros (exact fit, constant y)
    floor = (64 * np.finfo(float).eps * max(np.linalg.norm(y), np.finfo(float).tiny)) ** 2
    sse = float(resid @ resid)
    sse = 0.0 if sse <= floor else sse
    tss = float(((y - y.mean()) ** 2).sum())
    tss = 0.0 if tss <= floor else tss
    r2 = 1.0 - sse / tss if tss > 0 else 0.0
    sigma2 = sse / (n - k)
    se = np.sqrt(sigma2 * np.diag(np.linalg.inv(x.T @ x)))
    tiny = 1e-12 * max(np.abs(y).max(initial=0.0), 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / np.where(se > 0, se, 1.0),
                     np.where(np.abs(coef) <= tiny, 0.0, np.sign(coef) * np.inf))
    return OlsFit(names, coef, se, t, float(min(max(r2, 0.0), 1.0)), n, resid)


@dataclass
class RegressionReport:
    one_factor: OlsFit
    two_factor: OlsFit | None = None
    three_factor: OlsFit | None = None
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "one_factor": self.one_factor.as_dict(),
            "two_factor": None if self.two_factor is None else self.two_factor.as_dict(),
            "three_factor": None if self.three_factor is None else self.three_factor.as_dict(),
            "notes": list(self.notes),
        }


def factor_regressions(ep_returns, factor_returns, eq_returns=None, vol_returns=None) -> RegressionReport:
    """1-, 2- and 3-factor fits of eigenportfolio on factor (+ equity, + vol) returns.

    Benchmark days with NaN are dropped from the fits that use them.
    """
    y = np.asarray(ep_returns, dtype=float)
    f = np.asarray(factor_returns, dtype=float)
    if y.shape != f.shape:
        raise DomainError("eigenportfolio and factor series are not aligned")
    if y.size < 10:
        raise InsufficientDataError(f"regressions need at least 10 observations, got {y.size}")
    rep = RegressionReport(ols(y, {"beta": f}))
    if eq_returns is None:
        rep.notes.append("no equity benchmark; 2- and 3-factor fits skipped")
        return rep
    eq = np.asarray(eq_returns, dtype=float)
    ok = np.isfinite(eq)
    rep.two_factor = ols(y[ok], {"beta": f[ok], "b_eq": eq[ok]})
    if vol_returns is None:
        rep.notes.append("no volatility benchmark; 3-factor fit skipped")
        return rep
    vx = np.asarray(vol_returns, dtype=float)
    ok &= np.isfinite(vx)
    rep.three_factor = ols(y[ok], {"beta": f[ok], "b_eq": eq[ok], "b_vx": vx[ok]})
    return rep


def period_regressions(dates, ep_returns, factor_returns, eq_returns=None, vol_returns=None,
                       span_years: int = 3) -> dict:
    """Regressions over the whole sample and each rolling block of calendar years."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    years = dates.astype("datetime64[Y]").astype(int) + 1970
    series = [np.asarray(ep_returns, dtype=float), np.asarray(factor_returns, dtype=float),
              None if eq_returns is None else np.asarray(eq_returns, dtype=float),
              None if vol_returns is None else np.asarray(vol_returns, dtype=float)]
    out = {"all": factor_regressions(*series)}
    first, last = int(years.min()), int(years.max())
    for y0 in range(first, last - span_years + 2):
        mask = (years >= y0) & (years < y0 + span_years)
        if mask.sum() < 10:
            continue
        part = [None if s is None else s[mask] for s in series]
        try:
            out[f"{y0}-{y0 + span_years - 1}"] = factor_regressions(*part)
        except (NumericError, InsufficientDataError) as exc:
            logger.warning("period %d-%d skipped: %s", y0, y0 + span_years - 1, exc)
    return out


# --------------------------------------------------------------------------
# In-sample and sliding-window pipelines
# --------------------------------------------------------------------------

def flat_returns(surfaces: SurfacePanel) -> np.ndarray:
    """Raw returns as contracts x days."""
    r = raw_returns(surfaces.implied_vol, axis=0)
    return r.reshape(r.shape[0], -1).T


@dataclass
class InSampleRun:
    portfolio: Eigenportfolio
    report: SpectrumReport
    factor: FactorSeries
    beta: BetaVector
    alignment: AlignmentRecord
    contracts: list
    avg_oi: np.ndarray
    raw: np.ndarray

    def top_table(self, k: int = 32) -> list[dict]:
        """Largest-weight contracts with beta/h^2 and average OI."""
        order = np.argsort(-self.portfolio.weights, kind="stable")[:k]
        h = self.portfolio.h
        rows = []
        for i in order:
            ticker, mat, delta = self.contracts[i]
            rows.append({"ticker": ticker, "maturity_days": int(mat), "delta": int(delta),
                         "beta_over_h2": float(self.beta.beta[i] / h[i] ** 2),
                         "avg_oi": float(self.avg_oi[i])})
        return rows


def in_sample_run(surfaces: SurfacePanel, weighting: str = "log_oi_vega") -> InSampleRun:
    """Eigenportfolio of one window with betas on the same-day weighted factor."""
    raw = flat_returns(surfaces)
    panel = standardize(raw, surfaces.contracts(), surfaces.dates[1:])
    if panel.N == 0:
        raise EmptyResultError("no contract has a complete return series in the window")
    keep = [i for i, c in enumerate(surfaces.contracts()) if c not in set(panel.dropped)]
    report = svd_panel(panel)
    ep = eigenportfolio(report, panel.row_stds, contracts=panel.contracts)
    w = weight_panel(surfaces, weighting)
    w = w.reshape(w.shape[0], -1).T[keep][:, 1:]
    r = raw[keep]
    factor = oi_factor_returns(r, w, surfaces.dates[1:], weighting)
    beta = betas(r, factor)
    align = sorted_alignment(ep.weights, beta.beta, panel.row_stds)
    oi = surfaces.open_interest.reshape(surfaces.shape[0], -1).T[keep]
    return InSampleRun(ep, report, factor, beta, align, panel.contracts, oi.mean(axis=1), r)


@dataclass
class Rebalance:
    date: np.datetime64
    index: int
    n_contracts: int
    weights: np.ndarray  # over all contracts, zero where not estimated
    info: dict = field(default_factory=dict)


@dataclass
class FactorRun:
    dates: np.ndarray
    ep_returns: np.ndarray
    factor_returns: np.ndarray
    ep_index: np.ndarray
    factor_index: np.ndarray
    weighting: str
    rebalances: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def rebalance_points(dates, window: int, rebalance="monthly") -> list[int]:
    """Indices of return dates at which new weights start to apply.

    ``monthly`` picks the first date of each calendar month; an integer
    rebalances every that many days. No point precedes a full window.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    if rebalance == "monthly":
        months = dates.astype("datetime64[M]")
        firsts = np.flatnonzero(np.r_[True, months[1:] != months[:-1]])
        return [int(i) for i in firsts if i >= window]
    step = int(rebalance)
    if step < 1:
        raise DomainError(f"rebalance step must be positive, got {step}")
    return list(range(window, dates.size, step))


def _hold(weights: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Held-portfolio returns; missing contract returns count as 0."""
    return weights @ np.where(np.isfinite(r), r, 0.0)


def sliding_window_run(surfaces: SurfacePanel, window: int = 126, rebalance="monthly",
                       weighting: str = "log_oi_vega", estimator=None, factor_fn=None) -> FactorRun:
    """Adapted eigenportfolio against the weighted factor.

    Weights set at a rebalance date come from the ``window`` returns strictly
    before it and are held until the next rebalance. The factor on each day
    weighs returns by the previous day's open interest.

    ``estimator`` maps (window returns N x T, window dates) to full-length
    weights, optionally paired with a diagnostics dict. ``factor_fn`` maps
    (returns, weights, dates) to a FactorSeries and defaults to the flat
    weighted mean.
    """
    if window < 30:
        raise DomainError(f"window must be at least 30 days, got {window}")
    if weighting not in WEIGHTINGS:
        raise DomainError(f"unknown weighting {weighting!r}")
    raw = flat_returns(surfaces)
    rdates = surfaces.dates[1:]
    if rdates.size < window + 21:
        raise InsufficientDataError(f"{rdates.size} return days; need at least {window + 21}")
    w_all = weight_panel(surfaces, weighting)
    w_all = w_all.reshape(w_all.shape[0], -1).T  # contracts x surface days
    estimator = estimator or _flat_estimator
    factor_fn = factor_fn or oi_factor_returns
    points = rebalance_points(rdates, window, rebalance)
    if not points:
        raise EmptyResultError("no rebalance date after the first full window")
    ends = points[1:] + [rdates.size]
    ep_parts, idx_parts, rebs, skipped = [], [], [], []
    current = None
    for start, stop in zip(points, ends):
        block = raw[:, start - window:start]
        info = {}
        try:
            est = estimator(block, rdates[start - window:start])
            if isinstance(est, tuple):
                est, info = est
        except (NumericError, InsufficientDataError, DomainError) as exc:
            est = None
            logger.warning("window ending %s skipped: %s", rdates[start - 1], exc)
        if est is None:
            skipped.append(str(rdates[start]))
            if current is None:
                continue
        else:
            current = est
            rebs.append(Rebalance(rdates[start], start, int(np.count_nonzero(est)), est, info))
        ep_parts.append(_hold(current, raw[:, start:stop]))
        idx_parts.append(np.arange(start, stop))
    if not idx_parts:
        raise EmptyResultError("every estimation window was skipped")
    idx = np.concatenate(idx_parts)
    ep = np.concatenate(ep_parts)
    # return t spans surface days t -> t+1, so lagged weights are w_all[:, t]
    factor = factor_fn(raw[:, idx], w_all[:, idx], rdates[idx], weighting)
    return FactorRun(rdates[idx], ep, factor.returns, compound_index(ep), factor.levels, weighting,
                     rebs, skipped, dict(getattr(factor, "extra", {}) or {}))


def _flat_estimator(block: np.ndarray, dates) -> np.ndarray | None:
    panel = standardize(block, list(range(block.shape[0])), dates)
    if panel.N <= panel.T:
        raise InsufficientDataError(f"only {panel.N} usable contracts for {panel.T} days")
    ep = eigenportfolio(svd_panel(panel), panel.row_stds)
    out = np.zeros(block.shape[0])
    out[np.asarray(panel.contracts, dtype=int)] = ep.weights
    return out
