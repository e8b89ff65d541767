"""Spectrum of the return panel and Marchenko-Pastur support matching.

Eigenvalues here are always the normalized squared singular values
``X_i = S_ii**2 / N`` of the N x T panel, i.e. the spectrum of ``R^T R / N``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import stats
from scipy.interpolate import PchipInterpolator

from .errors import (
    DegenerateSpectrumError,
    DomainError,
    InsufficientDataError,
    NumericError,
    SelectionError,
)

logger = logging.getLogger(__name__)

MP_CDF_TOL = 1e-9


# --------------------------------------------------------------------------
# SVD
# --------------------------------------------------------------------------

def thin_svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Economy SVD ``A = U diag(s) V^T`` with column sums of U made non-negative."""
    a = np.asarray(matrix, dtype=float)
    if not np.isfinite(a).all():
        raise NumericError("matrix has non-finite entries")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        fro = float(np.linalg.norm(a))
        raise NumericError(f"SVD did not converge for {a.shape} matrix (Frobenius norm {fro:.6g}): {exc}") from exc
    v = vt.T
    flip = u.sum(axis=0) < 0
    u[:, flip] *= -1
    v[:, flip] *= -1
    return u, s, v


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    U: np.ndarray
    V: np.ndarray
    N: int
    T: int

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.singular_values**2 / self.N

    @property
    def log_spectrum(self) -> np.ndarray:
        """``log(1 + X_i)``, for histograms only."""
        return np.log1p(self.eigenvalues)

    @property
    def rank(self) -> int:
        s = self.singular_values
        if s.size == 0 or s[0] == 0:
            return 0
        tol = s[0] * max(self.N, self.T) * np.finfo(float).eps
        return int((s > tol).sum())

    def nonzero_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the numerically non-null part of the spectrum.

        Row-demeaned panels always lose one dimension (``R 1 = 0``), so the
        trailing zero must not be used as the lower support edge.
        """
        return self.eigenvalues[: self.rank]


def svd_panel(panel) -> SpectrumReport:
    """Thin SVD of a ReturnsPanel (or bare N x T array) with ``N > T``."""
    m = np.asarray(getattr(panel, "matrix", panel), dtype=float)
    if m.ndim != 2:
        raise DomainError("panel must be two-dimensional")
    n, t = m.shape
    if n <= t:
        raise DomainError(f"need more contracts than days, got N={n}, T={t}")
    u, s, v = thin_svd(m)
    return SpectrumReport(s, u, v, n, t)


# --------------------------------------------------------------------------
# Marchenko-Pastur law
# --------------------------------------------------------------------------

def _check_mp(gamma: float, lam: float) -> None:
    if not (gamma > 0 and math.isfinite(gamma)):
        raise DomainError(f"gamma must be positive, got {gamma}")
    if not (0 < lam < 1):
        raise DomainError(f"dimension ratio must lie in (0, 1), got {lam}")


def mp_edges(gamma: float, lam: float) -> tuple[float, float]:
    """Support ``(lambda_-, lambda_+)``."""
    r = math.sqrt(lam)
    return gamma**2 * (1 - r) ** 2, gamma**2 * (1 + r) ** 2


def mp_density(x, gamma: float, lam: float):
    _check_mp(gamma, lam)
    lo, hi = mp_edges(gamma, lam)
    x = np.asarray(x, dtype=float)
    inside = (x >= lo) & (x <= hi)
    xs = np.where(inside, x, 1.0)
    val = np.sqrt(np.clip((hi - xs) * (xs - lo), 0.0, None)) / (2 * np.pi * gamma**2 * lam * xs)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float,
                     max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature with Richardson correction."""
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    stack = [(a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), tol, 0)]
    total = 0.0
    while stack:
        a0, b0, fa0, fm0, fb0, whole, eps, depth = stack.pop()
        m = 0.5 * (a0 + b0)
        flm, frm = f(0.5 * (a0 + m)), f(0.5 * (m + b0))
        left = (m - a0) / 6 * (fa0 + 4 * flm + fm0)
        right = (b0 - m) / 6 * (fm0 + 4 * frm + fb0)
        diff = left + right - whole
        if depth >= max_depth or abs(diff) <= 15 * eps:
            total += left + right + diff / 15
        else:
            stack.append((m, b0, fm0, frm, fb0, right, eps / 2, depth + 1))
            stack.append((a0, m, fa0, flm, fm0, left, eps / 2, depth + 1))
    return total


class _MpAngular:
    """The MP law on the angle ``theta`` with ``x = lo + (hi-lo)(1-cos theta)/2``.

    The substitution turns the square-root edges into a smooth integrand.
    """

    def __init__(self, gamma: float, lam: float):
        _check_mp(gamma, lam)
        self.lo, self.hi = mp_edges(gamma, lam)
        half = 0.5 * (self.hi - self.lo)
        self.c = half * half / (2 * math.pi * gamma**2 * lam)

    def x(self, theta):
        return self.lo + (self.hi - self.lo) * 0.5 * (1 - np.cos(theta))

    def theta(self, x):
        u = 1 - 2 * (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)
        return np.arccos(np.clip(u, -1.0, 1.0))

    def integrand(self, theta: float) -> float:
        s = math.sin(theta)
        return self.c * s * s / (self.lo + (self.hi - self.lo) * 0.5 * (1 - math.cos(theta)))

    def cumulative(self, thetas: np.ndarray, tol: float) -> np.ndarray:
        """CDF at ascending angles, integrating piece by piece."""
        out = np.empty(len(thetas))
        acc, prev = 0.0, 0.0
        for i, th in enumerate(thetas):
            if th > prev:
                acc += adaptive_simpson(self.integrand, prev, th, tol * (th - prev) / math.pi)
                prev = th
            out[i] = acc
        return out


def mp_cdf(x, gamma: float, lam: float, tol: float = MP_CDF_TOL):
    """MP distribution function by adaptive Simpson quadrature of the density."""
    law = _MpAngular(gamma, lam)
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    order = np.argsort(flat, kind="stable")
    thetas = law.theta(flat[order])
    vals = np.empty(flat.size)
    vals[order] = law.cumulative(thetas, tol)
    vals[flat <= law.lo] = 0.0
    vals[flat >= law.hi] = 1.0
    out = vals.reshape(x.shape)
    return float(out) if out.ndim == 0 else out


def mp_quantile(p, gamma: float, lam: float, tol: float = MP_CDF_TOL, grid: int = 1025):
    """Inverse MP distribution function.

    A tabulated inverse gives the starting angle; Newton steps on the
    quadrature CDF then polish it.
    """
    law = _MpAngular(gamma, lam)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("probabilities must lie in [0, 1]")
    th_grid = np.linspace(0.0, math.pi, grid)
    f_grid = law.cumulative(th_grid, tol)
    f_grid[-1] = max(f_grid[-1], f_grid[-2])
    inv = PchipInterpolator(f_grid, th_grid)
    flat = p.ravel()
    th = np.clip(inv(np.clip(flat, 0.0, f_grid[-1])), 0.0, math.pi)
    for _ in range(3):
        order = np.argsort(th, kind="stable")
        f = np.empty_like(th)
        f[order] = law.cumulative(th[order], tol)
        g = np.array([law.integrand(t) for t in th])
        step = np.where(g > 1e-12, (f - flat) / np.where(g > 1e-12, g, 1.0), 0.0)
        th = np.clip(th - step, 0.0, math.pi)
    out = law.x(th)
    out = np.where(flat <= 0, law.lo, np.where(flat >= 1, law.hi, out)).reshape(p.shape)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Support matching
# --------------------------------------------------------------------------

@dataclass
class MpFit:
    d: int
    lambda_plus: float
    lambda_minus: float
    gamma: float
    lam: float
    n_eff: float
    T: int
    ks_statistic: float | None = None
    ks_pvalue: float | None = None
    reject: bool | None = None
    alpha: float | None = None

    def report(self, outlier_count: int | None = None) -> dict:
        """JSON-ready summary."""
        out = {
            "d": self.d,
            "lambda_plus": self.lambda_plus,
            "lambda_minus": self.lambda_minus,
            "gamma": self.gamma,
            "lambda": self.lam,
            "N_eff": int(round(self.n_eff)),
            "ks_statistic": self.ks_statistic,
            "pvalue": self.ks_pvalue,
        }
        if outlier_count is not None:
            out["outlier_count"] = outlier_count
        return out


def mp_parameters(lambda_plus: float, lambda_minus: float) -> tuple[float, float]:
    """``(gamma, lambda)`` whose MP support is ``[lambda_minus, lambda_plus]``."""
    if not (lambda_plus > lambda_minus):
        raise DegenerateSpectrumError(
            f"upper support {lambda_plus} must exceed lower support {lambda_minus}")
    if lambda_minus <= 0:
        raise DegenerateSpectrumError(f"lower support must be positive, got {lambda_minus}")
    rp, rm = math.sqrt(lambda_plus), math.sqrt(lambda_minus)
    gamma = (rp + rm) / 2
    lam = ((rp - rm) / (2 * gamma)) ** 2
    return gamma, lam


def fit_mp_support(eigenvalues, d: int, T: int | None = None) -> MpFit:
    """Match the MP support to ``[X_T, X_{d+1}]`` of a descending spectrum.

    ``T`` (days) sets the effective dimension ``T / lambda``; it defaults to
    the number of eigenvalues given.
    """
    x = np.asarray(eigenvalues, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InsufficientDataError("need a one-dimensional spectrum with at least two values")
    if np.any(np.diff(x) > 0):
        raise DomainError("eigenvalues must be sorted in descending order")
    if not (0 <= d < x.size - 1):
        raise DomainError(f"d must satisfy 0 <= d < {x.size - 1}, got {d}")
    if x[-1] <= 0:
        raise DegenerateSpectrumError(f"smallest eigenvalue must be positive, got {x[-1]}")
    gamma, lam = mp_parameters(float(x[d]), float(x[-1]))
    t = x.size if T is None else int(T)
    return MpFit(d, float(x[d]), float(x[-1]), gamma, lam, t / lam, t)


def effective_dimension(fit, T: int | None = None, N: int | None = None) -> float:
    """``T / lambda``: rows of an i.i.d. matrix with the same residual spectrum."""
    lam = fit.lam if isinstance(fit, MpFit) else float(fit)
    if T is None:
        if not isinstance(fit, MpFit):
            raise DomainError("T is required when passing a bare dimension ratio")
        T = fit.T
    if not (lam > 0):
        raise DomainError(f"dimension ratio must be positive, got {lam}")
    if lam > 1:
        raise DomainError(f"dimension ratio must not exceed 1, got {lam}")
    n_eff = T / lam
    if N is not None and n_eff > 0.1 * N:
        logger.info("effective dimension %.0f is not small against N=%d", n_eff, N)
    return n_eff


# --------------------------------------------------------------------------
# Kolmogorov-Smirnov
# --------------------------------------------------------------------------

class KsResult(NamedTuple):
    statistic: float
    pvalue: float
    reject: bool


def ks_one_sample_statistic(sample, cdf_values) -> float:
    """Sup distance between the empirical CDF of ``sample`` and CDF values at it."""
    order = np.argsort(np.asarray(sample, dtype=float), kind="stable")
    f = np.asarray(cdf_values, dtype=float)[order]
    n = f.size
    i = np.arange(1, n + 1)
    return float(max((i / n - f).max(), (f - (i - 1) / n).max()))


def ks_two_sample_statistic(x, y) -> float:
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    pooled = np.concatenate([x, y])
    fx = np.searchsorted(x, pooled, side="right") / x.size
    fy = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.abs(fx - fy).max())


def kolmogorov_pvalue(statistic: float, n: int, m: int | None = None) -> float:
    """Asymptotic Kolmogorov tail; two-sample when ``m`` is given."""
    en = math.sqrt(n) if m is None else math.sqrt(n * m / (n + m))
    return float(stats.kstwobign.sf(en * statistic))


def ks_test(residual_eigs, fit: MpFit, mode: str = "one_sample", alpha: float = 0.05,
            m: int | None = None) -> KsResult:
    """KS test of residual eigenvalues against the fitted MP law.

    ``one_sample`` uses the quadrature CDF; ``two_sample`` compares with
    ``m`` (default ten times the sample size) quantile-spaced MP points.
    """
    x = np.asarray(residual_eigs, dtype=float)
    n = x.size
    if n < 10:
        raise InsufficientDataError(f"KS test needs at least 10 eigenvalues, got {n}")
    if not (0 < alpha < 1):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if mode == "one_sample":
        stat = ks_one_sample_statistic(x, mp_cdf(x, fit.gamma, fit.lam))
        p = kolmogorov_pvalue(stat, n)
    elif mode == "two_sample":
        m = 10 * n if m is None else int(m)
        ref = mp_quantile((np.arange(m) + 0.5) / m, fit.gamma, fit.lam)
        stat = ks_two_sample_statistic(x, ref)
        p = kolmogorov_pvalue(stat, n, m)
    else:
        raise DomainError(f"unknown KS mode {mode!r}")
    return KsResult(stat, p, bool(p < alpha))


def fit_and_test(eigenvalues, d: int, T: int | None = None, mode: str = "one_sample",
                 alpha: float = 0.05, m: int | None = None) -> MpFit:
    """Support fit at ``d`` with the KS fields filled in."""
    x = np.asarray(eigenvalues, dtype=float)
    fit = fit_mp_support(x, d, T)
    res = ks_test(x[d:], fit, mode=mode, alpha=alpha, m=m)
    fit.ks_statistic, fit.ks_pvalue, fit.reject, fit.alpha = res.statistic, res.pvalue, res.reject, alpha
    return fit


@dataclass
class FactorSelection:
    d: int
    fit: MpFit
    outlier_count: int
    history: list = field(default_factory=list)

    def report(self) -> dict:
        return self.fit.report(self.outlier_count)


def select_factor_count(report: SpectrumReport, alpha: float = 0.05, d_max: int = 20,
                        mode: str = "one_sample", m: int | None = None) -> FactorSelection:
    """Smallest ``d`` whose residual spectrum the KS test does not reject."""
    x = report.nonzero_eigenvalues()
    if d_max >= x.size - 10:
        raise DomainError(f"d_max={d_max} leaves fewer than 10 residual eigenvalues")
    history = []
    for d in range(d_max + 1):
        fit = fit_and_test(x, d, report.T, mode=mode, alpha=alpha, m=m)
        history.append((d, fit.ks_statistic, fit.ks_pvalue))
        if not fit.reject:
            outliers = int((x > fit.lambda_plus).sum())
            return FactorSelection(d, fit, outliers, history)
    worst = ", ".join(f"d={d}: D={s:.4f} p={p:.3g}" for d, s, p in history[-3:])
    raise SelectionError(f"KS rejects every d <= {d_max} at alpha={alpha} ({worst})")


# --------------------------------------------------------------------------
# Rank-d split and residual temporal loadings
# --------------------------------------------------------------------------

@dataclass
class FactorDecomposition:
    d: int
    low_rank: np.ndarray
    residual: np.ndarray
    factors: np.ndarray  # N x d, unit columns
    loadings: np.ndarray  # T x d, S_ii V_i
    report: SpectrumReport


def decompose(report: SpectrumReport, d: int) -> FactorDecomposition:
    if not (0 <= d <= report.T):
        raise DomainError(f"d must lie in [0, {report.T}], got {d}")
    u, s, v = report.U, report.singular_values, report.V
    low = (u[:, :d] * s[:d]) @ v[:, :d].T
    res = (u[:, d:] * s[d:]) @ v[:, d:].T
    return FactorDecomposition(d, low, res, u[:, :d].copy(), v[:, :d] * s[:d], report)


@dataclass
class LoadingCheck:
    statistic: float
    pvalue: float
    reject: bool
    residual_spectrum: np.ndarray
    synthetic_spectrum: np.ndarray
    residual_loadings: np.ndarray  # S V~^T / N, (T-d) x T
    synthetic_loadings: np.ndarray  # Sigma Q^T, T x T
    n_eff: int


def residual_loading_check(decomp: FactorDecomposition, fit: MpFit, alpha: float = 0.05,
                           seed: int | None = 0) -> LoadingCheck:
    """Compare the residual spectrum with that of ``Y^T Y / N_eff``.

    ``Y`` is an ``N_eff x T`` Gaussian matrix with entry std ``gamma``; the
    two spectra are compared with a two-sample KS test.
    """
    rep = decomp.report
    d = decomp.d
    s = rep.singular_values[d: rep.rank]
    resid = s**2 / rep.N
    n_eff = max(int(round(fit.n_eff)), rep.T)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, fit.gamma, size=(n_eff, rep.T))
    sigma, q = np.linalg.eigh(y.T @ y / n_eff)
    sigma, q = sigma[::-1], q[:, ::-1]
    stat = ks_two_sample_statistic(resid, sigma)
    p = kolmogorov_pvalue(stat, resid.size, sigma.size)
    loadings = (s[:, None] * rep.V[:, d: rep.rank].T) / rep.N
    return LoadingCheck(stat, p, bool(p < alpha), resid, sigma, loadings, sigma[:, None] * q.T, n_eff)


def histogram_data(eigenvalues, fit: MpFit, bins: int = 50, samples: int = 200):
    """Histogram of residual eigenvalues and MP density samples for plotting."""
    x = np.asarray(eigenvalues, dtype=float)
    counts, edges = np.histogram(x, bins=bins)
    width = np.diff(edges)
    density = counts / (counts.sum() * width)
    grid = np.linspace(fit.lambda_minus, fit.lambda_plus, samples)
    return (edges[:-1], edges[1:], counts, density), (grid, mp_density(grid, fit.gamma, fit.lam))


def fit_as_dict(fit: MpFit) -> dict:
    return asdict(fit)
