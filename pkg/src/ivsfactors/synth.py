"""Synthetic spike-model panels and factor markets with known ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DomainError, NumericError
from .market_data import DELTAS, MATURITIES, SurfacePanel, to_call_equivalent
from .rmt_spectrum import mp_edges

START_DATE = np.datetime64("2010-01-04")


def business_dates(n: int, start=START_DATE) -> np.ndarray:
    return np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")


# --------------------------------------------------------------------------
# Spike model panels
# --------------------------------------------------------------------------

def gen_noise_panel(N: int, T: int, gamma: float = 1.0, seed=None) -> np.ndarray:
    """i.i.d. Gaussian N x T matrix with std ``gamma``."""
    if N < 2 or T < 2:
        raise DomainError(f"need N, T >= 2, got N={N}, T={T}")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    return np.random.default_rng(seed).normal(0.0, gamma, size=(N, T))


def bulk_edge(N: int, T: int, gamma: float = 1.0) -> float:
    """Upper MP edge of the noise spectrum ``X^T X / N``."""
    return mp_edges(gamma, T / N)[1]


@dataclass
class SpikeSpec:
    N: int
    T: int
    d: int = 0
    strength: float | Sequence[float] = 3.0  # multiples of the bulk edge
    gamma: float = 1.0
    seed: int | None = 0

    def strengths(self) -> np.ndarray:
        s = np.broadcast_to(np.asarray(self.strength, dtype=float), (self.d,)).copy()
        return s

    def validate(self) -> None:
        if not (0 <= self.d < min(self.N, self.T)):
            raise DomainError(f"d must satisfy 0 <= d < min(N, T), got {self.d}")
        if self.N <= self.T:
            raise DomainError(f"need N > T, got N={self.N}, T={self.T}")
        if np.any(~(self.strengths() > 0)):
            raise DomainError("spike strengths must be positive")


@dataclass
class SpikePanel:
    matrix: np.ndarray
    factors: np.ndarray  # N x d, orthonormal columns f_i
    loadings: np.ndarray  # T x d, columns theta_i
    noise: np.ndarray
    edge: float

    @property
    def low_rank(self) -> np.ndarray:
        return self.factors @ self.loadings.T


def gen_spike_panel(spec: SpikeSpec) -> SpikePanel:
    """``R = sum_i f_i theta_i^T + X`` with ``|theta_i|^2 = N * strength_i * edge``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.gamma, size=(spec.N, spec.T))
    edge = bulk_edge(spec.N, spec.T, spec.gamma)
    if spec.d == 0:
        empty_f, empty_t = np.zeros((spec.N, 0)), np.zeros((spec.T, 0))
        return SpikePanel(noise, empty_f, empty_t, noise, edge)
    f, _ = np.linalg.qr(rng.normal(size=(spec.N, spec.d)))
    dirs, _ = np.linalg.qr(rng.normal(size=(spec.T, spec.d)))
    theta = dirs * np.sqrt(spec.N * spec.strengths() * edge)
    return SpikePanel(f @ theta.T + noise, f, theta, noise, edge)


# --------------------------------------------------------------------------
# Markets on an implied-vol grid
# --------------------------------------------------------------------------

def bs_vega(spot, call_equiv_delta, tau_days):
    """Black-Scholes vega per unit of vol at a given call delta (zero rates)."""
    d1 = stats.norm.ppf(np.asarray(call_equiv_delta, dtype=float))
    return np.asarray(spot, dtype=float) * stats.norm.pdf(d1) * np.sqrt(np.asarray(tau_days) / 365.0)


@dataclass
class OiSpec:
    zero_prob: float = 0.3
    log_mean: float = math.log(500.0)
    log_sd: float = 1.0
    daily_sd: float = 0.2


def _open_interest(rng, days: int, scale: np.ndarray, spec: OiSpec) -> np.ndarray:
    """Zero-inflated lognormal OI; ``scale`` multiplies each contract's base level."""
    base = np.exp(rng.normal(spec.log_mean, spec.log_sd, size=scale.shape)) * scale
    paths = base[None] * np.exp(rng.normal(0.0, spec.daily_sd, size=(days, *scale.shape)))
    zero = rng.random(paths.shape) < spec.zero_prob
    return np.where(zero, 0, np.rint(paths)).astype(np.int64)


def market_from_returns(returns: np.ndarray, tickers, maturities, deltas, rng,
                        oi: OiSpec | None = None, oi_scale=None, base_vol=None,
                        spot_vol: float = 0.015) -> SurfacePanel:
    """Integrate (time, name, maturity, delta) returns into a surface panel.

    Levels start from ``base_vol`` and follow ``sigma(t+1) = sigma(t)(1+r(t))``;
    spots follow a driftless GBM and vegas are Black-Scholes vegas.
    """
    r = np.asarray(returns, dtype=float)
    t, n1, n2, n3 = r.shape
    if np.any(r <= -1):
        raise NumericError("generated return at or below -100%; lower the factor or noise scale")
    if base_vol is None:
        base_vol = rng.uniform(0.15, 0.45, size=(n1, 1, 1)) * (1 + 0.1 * rng.random((1, n2, n3)))
    base_vol = np.broadcast_to(np.asarray(base_vol, dtype=float), (n1, n2, n3))
    growth = np.concatenate([np.ones((1, n1, n2, n3)), np.cumprod(1 + r, axis=0)])
    iv = base_vol[None] * growth
    s0 = rng.uniform(20.0, 300.0, size=n1)
    steps = rng.normal(-0.5 * spot_vol**2, spot_vol, size=(t, n1))
    spot = s0[None] * np.exp(np.concatenate([np.zeros((1, n1)), np.cumsum(steps, axis=0)]))
    ce = to_call_equivalent(np.asarray(deltas, dtype=float)) if n3 else np.zeros(0)
    unit = bs_vega(1.0, ce[None, :], np.asarray(maturities, dtype=float)[:, None])
    vega = spot[:, :, None, None] * unit[None, None]
    vega = np.broadcast_to(vega, iv.shape).copy()
    scale = np.ones((n1, n2, n3)) if oi_scale is None else np.broadcast_to(oi_scale, (n1, n2, n3))
    open_int = _open_interest(rng, t + 1, np.asarray(scale, dtype=float), oi or OiSpec())
    return SurfacePanel(business_dates(t + 1), tuple(tickers), iv, open_int, vega, spot,
                        tuple(maturities), tuple(deltas))


def _tickers(n: int) -> tuple[str, ...]:
    return tuple(f"S{i:04d}" for i in range(n))


def _grid(maturities, deltas):
    m = tuple(MATURITIES if maturities is None else maturities)
    d = tuple(DELTAS if deltas is None else deltas)
    bad = [x for x in m if x not in MATURITIES] + [x for x in d if x not in DELTAS]
    if bad:
        raise DomainError(f"grid labels {bad} are not on the surface grid")
    return m, d


@dataclass
class FactorMarketSpec:
    n_names: int = 50
    T: int = 250
    maturities: tuple | None = None
    deltas: tuple | None = None
    factor_vol: float = 0.03
    beta_log_sd: float = 0.3
    idio_log_mean: float = math.log(0.02)
    idio_log_sd: float = 0.5
    oi: OiSpec = field(default_factory=OiSpec)
    seed: int | None = 0


@dataclass
class FactorMarket:
    surfaces: SurfacePanel
    factor_returns: np.ndarray  # T
    beta: np.ndarray  # (names, maturities, deltas)
    idio_std: np.ndarray
    returns: np.ndarray  # (T, names, maturities, deltas)

    def flat_beta(self) -> np.ndarray:
        return self.beta.ravel()


def gen_factor_market(spec: FactorMarketSpec) -> FactorMarket:
    """One-factor market ``r_i(t) = beta_i f(t) + xi_i(t)`` on a surface grid."""
    m, d = _grid(spec.maturities, spec.deltas)
    if spec.n_names < 1 or spec.T < 2:
        raise DomainError("need at least one name and two days")
    rng = np.random.default_rng(spec.seed)
    shape = (spec.n_names, len(m), len(d))
    f = rng.normal(0.0, spec.factor_vol, size=spec.T)
    beta = np.exp(rng.normal(-0.5 * spec.beta_log_sd**2, spec.beta_log_sd, size=shape))
    idio = np.exp(rng.normal(spec.idio_log_mean, spec.idio_log_sd, size=shape))
    xi = rng.normal(size=(spec.T, *shape)) * idio[None]
    r = beta[None] * f[:, None, None, None] + xi
    surf = market_from_returns(r, _tickers(spec.n_names), m, d, rng, oi=spec.oi)
    return FactorMarket(surf, f, beta, idio, r)


@dataclass
class TensorMarketSpec:
    n_names: int = 20
    T: int = 400
    maturities: tuple | None = None
    deltas: tuple | None = None
    rho: float = 0.5  # correlation between maturity factors
    factor_vol: float = 0.03
    beta_spread: float = 0.5  # range of per-maturity betas around 1
    beta_jitter: float = 0.02  # within-maturity dispersion of beta
    idio_short: float = 0.04  # idiosyncratic std at the shortest maturity
    idio_long: float = 0.01
    oi_short: float = 8.0  # OI multiplier at the shortest maturity (1 at the longest)
    oi: OiSpec = field(default_factory=OiSpec)
    seed: int | None = 0


@dataclass
class TensorMarket:
    surfaces: SurfacePanel
    maturity_factors: np.ndarray  # (maturities, T)
    beta: np.ndarray
    idio_std: np.ndarray
    returns: np.ndarray


def gen_tensor_market(spec: TensorMarketSpec) -> TensorMarket:
    """``r_ijk(t) = beta_ijk f_j(t) + xi_ijk(t)`` with one factor per maturity.

    ``f_j = sqrt(rho) g + sqrt(1 - rho) e_j``. Short maturities are noisier
    and carry more open interest, while betas vary mostly across maturities.
    """
    m, d = _grid(spec.maturities, spec.deltas)
    if not (0 <= spec.rho <= 1):
        raise DomainError(f"rho must lie in [0, 1], got {spec.rho}")
    rng = np.random.default_rng(spec.seed)
    n2 = len(m)
    shape = (spec.n_names, n2, len(d))
    g = rng.normal(size=spec.T)
    e = rng.normal(size=(n2, spec.T))
    fj = spec.factor_vol * (math.sqrt(spec.rho) * g[None] + math.sqrt(1 - spec.rho) * e)
    frac = np.linspace(0.0, 1.0, n2) if n2 > 1 else np.zeros(1)
    bj = 1.0 + spec.beta_spread * (frac - 0.5)
    beta = bj[None, :, None] * np.exp(rng.normal(0.0, spec.beta_jitter, size=shape))
    idio_j = spec.idio_short + (spec.idio_long - spec.idio_short) * frac
    idio = idio_j[None, :, None] * np.exp(rng.normal(0.0, 0.1, size=shape))
    xi = rng.normal(size=(spec.T, *shape)) * idio[None]
    r = beta[None] * fj.T[:, None, :, None] + xi
    oi_j = spec.oi_short + (1.0 - spec.oi_short) * frac
    surf = market_from_returns(r, _tickers(spec.n_names), m, d, rng, oi=spec.oi,
                               oi_scale=oi_j[None, :, None])
    return TensorMarket(surf, fj, beta, idio, r)


def panel_market(matrix: np.ndarray, n_names: int, maturities=None, deltas=None, scale: float = 0.01,
                 seed=None) -> SurfacePanel:
    """Surface panel whose contract returns are ``scale`` times the rows of ``matrix``."""
    m, d = _grid(maturities, deltas)
    n, t = matrix.shape
    if n != n_names * len(m) * len(d):
        raise DomainError(f"{n} rows do not fill {n_names} names x {len(m)} x {len(d)} grid")
    r = (scale * np.asarray(matrix, dtype=float)).T.reshape(t, n_names, len(m), len(d))
    return market_from_returns(r, _tickers(n_names), m, d, np.random.default_rng(seed))
