"""MLSVD of the return tensor and per-maturity eigenportfolios and factors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError
from .factors import (
    FactorRun,
    NORMALIZER_TOL,
    compound_index,
    sliding_window_run,
)
from .market_data import SurfacePanel
from .returns import IvsTensor, tensor_from_returns
from .rmt_spectrum import thin_svd

logger = logging.getLogger(__name__)

DOMINANCE_WARN = 0.3
GROUPINGS = ("maturity", "maturity_delta", "global")


# --------------------------------------------------------------------------
# MLSVD
# --------------------------------------------------------------------------

def unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization: rows indexed by that mode."""
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1)


def mode_product(tensor: np.ndarray, matrix: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``matrix`` into axis ``mode`` (rows of ``matrix`` become the new axis)."""
    out = np.tensordot(matrix, tensor, axes=(1, mode))
    return np.moveaxis(out, 0, mode)


@dataclass
class MlsvdDecomposition:
    factors: list  # U^(m), n_m x r_m with orthonormal columns
    core: np.ndarray
    sigmas: list  # per mode, Frobenius norms of core slices

    @property
    def dominance(self) -> float:
        """``|S(1,1,1,1)| / |S|_F``."""
        total = float(np.linalg.norm(self.core))
        return abs(float(self.core.flat[0])) / total if total > 0 else 0.0

    def reconstruct(self) -> np.ndarray:
        out = self.core
        for m, u in enumerate(self.factors):
            out = mode_product(out, u, m)
        return out


def slice_norms(core: np.ndarray, mode: int) -> np.ndarray:
    return np.linalg.norm(unfold(core, mode), axis=1)


def mlsvd(tensor, max_rank: int | None = None) -> MlsvdDecomposition:
    """Multilinear SVD from the thin SVDs of every unfolding.

    Each mode keeps ``min(n_m, prod of the other sizes)`` columns, which is
    exact; ``max_rank`` optionally truncates every mode further.
    """
    x = np.asarray(getattr(tensor, "tensor", tensor), dtype=float)
    if x.ndim < 1 or min(x.shape) < 1:
        raise DomainError(f"tensor dimensions must all be positive, got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("tensor has non-finite entries")
    factors = []
    for m in range(x.ndim):
        u, _, _ = thin_svd(unfold(x, m))
        if max_rank is not None:
            u = u[:, :max_rank]
        factors.append(u)
    core = x
    for m, u in enumerate(factors):
        core = mode_product(core, u.T, m)
    sigmas = [slice_norms(core, m) for m in range(x.ndim)]
    return MlsvdDecomposition(factors, core, sigmas)


def orthogonality_defect(core: np.ndarray) -> float:
    """Largest |inner product| between distinct parallel slices, over all modes."""
    worst = 0.0
    for m in range(core.ndim):
        g = unfold(core, m)
        gram = g @ g.T
        np.fill_diagonal(gram, 0.0)
        if gram.size:
            worst = max(worst, float(np.abs(gram).max()))
    return worst


@dataclass
class PrincipalVector:
    vector: np.ndarray  # (names, maturities, deltas), unit Frobenius norm
    dominance: float


def principal_tensor_vector(decomp: MlsvdDecomposition, warn: bool = True) -> PrincipalVector:
    """Outer product of the leading columns of the three spatial factor matrices."""
    u2, u3, u4 = (decomp.factors[m][:, 0] for m in (1, 2, 3))
    vec = np.einsum("i,j,k->ijk", u2, u3, u4)
    dom = decomp.dominance
    if warn and dom < DOMINANCE_WARN:
        logger.warning("core dominance %.3f below %.1f; rank-one tensor approximation is weak",
                       dom, DOMINANCE_WARN)
    return PrincipalVector(vec, dom)


# --------------------------------------------------------------------------
# Tensor eigenportfolio and factors
# --------------------------------------------------------------------------

def _sum_axes(grouping: str) -> tuple[int, ...]:
    if grouping == "maturity":
        return (0, 2)
    if grouping == "maturity_delta":
        return (0,)
    if grouping == "global":
        return (0, 1, 2)
    raise DomainError(f"unknown grouping {grouping!r}; expected one of {GROUPINGS}")


@dataclass
class TensorEigenportfolio:
    weights: np.ndarray
    vector: np.ndarray
    grouping: str = "maturity"

    def group_returns(self, returns) -> np.ndarray:
        """Per-group portfolio returns, shape (T, groups...); missing returns count as 0."""
        r = np.asarray(returns, dtype=float)
        r = np.where(np.isfinite(r), r, 0.0)
        axes = tuple(a + 1 for a in _sum_axes(self.grouping))
        return (self.weights[None] * r).sum(axis=axes)

    def returns(self, returns) -> np.ndarray:
        """Equal-weight mean of the per-group portfolio returns."""
        g = self.group_returns(returns)
        return g.reshape(g.shape[0], -1).mean(axis=1)

    def flat_weights(self) -> np.ndarray:
        """Weights of the same aggregate portfolio over flattened contracts."""
        axes = _sum_axes(self.grouping)
        groups = int(np.prod([self.weights.shape[a] for a in range(3) if a not in axes]))
        return self.weights.ravel() / groups


def tensor_eigenportfolio(vector, h, grouping: str = "maturity") -> TensorEigenportfolio:
    """``(U_ijk / h_ijk)`` normalized to unit sum within each maturity (or group)."""
    u = np.asarray(getattr(vector, "vector", vector), dtype=float)
    h = np.asarray(h, dtype=float)
    if u.shape != h.shape or u.ndim != 3:
        raise DomainError(f"vector {u.shape} and stds {h.shape} must share a 3-D shape")
    if np.any(~(h > 0)):
        raise DomainError("standard deviations must be positive")
    axes = _sum_axes(grouping)
    raw = u / h
    norm = raw.sum(axis=axes, keepdims=True)
    bad = np.argwhere(np.abs(norm) <= NORMALIZER_TOL)
    if bad.size:
        where = tuple(int(bad[0][a]) for a in range(3) if a not in axes)
        raise NumericError(f"tensor eigenportfolio normalizer vanishes for group {where}")
    return TensorEigenportfolio(raw / norm, u, grouping)


@dataclass
class MaturityFactors:
    per_group: np.ndarray  # (T, groups...)
    global_returns: np.ndarray
    levels: np.ndarray
    weighting: str = "custom"
    extra: dict = field(default_factory=dict)

    @property
    def returns(self) -> np.ndarray:
        return self.global_returns


def maturity_factors(returns, weights, dates=None, grouping: str = "maturity",
                     weighting: str = "custom") -> MaturityFactors:
    """Weighted mean return within each maturity, and their cross-maturity mean.

    ``returns`` and ``weights`` are (time, name, maturity, delta).
    """
    r = np.asarray(returns, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), r.shape)
    if r.ndim != 4:
        raise DomainError(f"returns must be 4-D, got shape {r.shape}")
    if np.any(w < 0):
        raise DomainError("weights must be non-negative")
    live = np.isfinite(r) & np.isfinite(w)
    w = np.where(live, w, 0.0)
    axes = tuple(a + 1 for a in _sum_axes(grouping))
    norm = w.sum(axis=axes)
    num = (w * np.where(live, r, 0.0)).sum(axis=axes)
    bad = np.argwhere(~(norm > NORMALIZER_TOL))
    if bad.size:
        t, *grp = (int(v) for v in bad[0])
        day = t if dates is None else dates[t]
        raise NumericError(f"factor weights sum to zero for group {tuple(grp)} on day {day}")
    per = num / norm
    glob = per.reshape(per.shape[0], -1).mean(axis=1)
    return MaturityFactors(per, glob, compound_index(glob), weighting)


# --------------------------------------------------------------------------
# Sliding-window tensor run
# --------------------------------------------------------------------------

def tensor_window_portfolio(tensor: IvsTensor, grouping: str = "maturity"):
    """MLSVD-based eigenportfolio of one standardized window."""
    decomp = mlsvd(tensor)
    pv = principal_tensor_vector(decomp)
    return tensor_eigenportfolio(pv, tensor.stds, grouping), decomp


def tensor_tracking_run(surfaces: SurfacePanel, window: int = 126, rebalance="monthly",
                        weighting: str = "log_oi_vega", grouping: str = "maturity") -> FactorRun:
    """Adapted tensor eigenportfolio against the global tensor factor.

    Names lacking a usable series for any of their contracts are left out of
    that window's tensor.
    """
    _sum_axes(grouping)
    n1, n2, n3 = surfaces.shape[1:]
    tickers = surfaces.tickers

    def estimator(block, dates):
        r = block.T.reshape(block.shape[1], n1, n2, n3)
        tens = tensor_from_returns(r, dates, range(n1), surfaces.maturities, surfaces.deltas,
                                   on_hole="drop_names")
        tep, decomp = tensor_window_portfolio(tens, grouping)
        full = np.zeros((n1, n2, n3))
        full[np.asarray(tens.tickers, dtype=int)] = tep.weights
        info = {
            "dominance": decomp.dominance,
            "sigmas": [s.tolist() for s in decomp.sigmas],
            "maturity_loadings": decomp.factors[2][:, 0].tolist(),
            "names": [tickers[i] for i in tens.tickers],
        }
        groups = int(np.prod([full.shape[a] for a in range(3) if a not in _sum_axes(grouping)]))
        return full.ravel() / groups, info

    def factor_fn(r, w, dates, weighting_name):
        t = r.shape[1]
        mf = maturity_factors(r.T.reshape(t, n1, n2, n3), w.T.reshape(t, n1, n2, n3), dates,
                              grouping, weighting_name)
        mf.extra["per_group"] = mf.per_group
        return mf

    return sliding_window_run(surfaces, window, rebalance, weighting, estimator, factor_fn)
