"""Implied-vol returns: the flat standardized panel and the 4-D return tensor."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, InputError, InsufficientDataError, NumericError
from .market_data import SurfacePanel

logger = logging.getLogger(__name__)

# Relative threshold below which a row's sample std counts as zero.
ZERO_STD_RTOL = 1e-12


def raw_returns(levels, axis: int = 0) -> np.ndarray:
    """Simple proportional day-over-day changes of implied vol along ``axis``.

    Missing levels (NaN) propagate to both adjacent returns.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.shape[axis] < 2:
        raise InsufficientDataError("need at least two observations to form a return")
    prev = np.take(levels, np.arange(levels.shape[axis] - 1), axis=axis)
    nxt = np.take(levels, np.arange(1, levels.shape[axis]), axis=axis)
    if np.any(prev == 0):
        raise NumericError("implied vol of exactly zero; return is undefined")
    return (nxt - prev) / prev


def _row_moments(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = m.mean(axis=1)
    std = m.std(axis=1, ddof=1)
    return mean, std


@dataclass
class ReturnsPanel:
    """N x T standardized returns with the moments needed to undo it."""

    matrix: np.ndarray
    row_means: np.ndarray
    row_stds: np.ndarray
    contracts: list = field(default_factory=list)
    dates: np.ndarray | None = None
    dropped: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def T(self) -> int:
        return self.matrix.shape[1]

    @property
    def raw(self) -> np.ndarray:
        """Un-standardized returns r_i(t)."""
        return self.matrix * self.row_stds[:, None] + self.row_means[:, None]

    def to_csv(self, path) -> None:
        """Write contracts as rows and dates as columns."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = [str(d) for d in self.dates] if self.dates is not None else [str(t) for t in range(self.T)]
            w.writerow(["ticker", "maturity_days", "delta_bucket", "mean", "std", *cols])
            for i, label in enumerate(self.contracts):
                w.writerow([*label, repr(float(self.row_means[i])), repr(float(self.row_stds[i])),
                            *(repr(float(v)) for v in self.matrix[i])])


def standardize(returns, contracts: Sequence | None = None, dates=None) -> ReturnsPanel:
    """Demean and scale each row to unit sample std (T-1 denominator).

    Rows containing NaN (gaps) or with zero variance are dropped and listed
    in ``ReturnsPanel.dropped``.
    """
    m = np.atleast_2d(np.asarray(returns, dtype=float))
    n, t = m.shape
    if t < 2:
        raise InsufficientDataError("need at least two observations per row")
    labels = list(contracts) if contracts is not None else list(range(n))
    if len(labels) != n:
        raise DomainError(f"{len(labels)} contract labels for {n} rows")
    finite = np.isfinite(m).all(axis=1)
    mean = np.full(n, np.nan)
    std = np.full(n, np.nan)
    mean[finite], std[finite] = _row_moments(m[finite])
    scale = np.abs(m).max(axis=1, initial=0.0, where=np.isfinite(m))
    flat = finite & ~(std > ZERO_STD_RTOL * np.maximum(scale, 1e-300))
    keep = finite & ~flat
    dropped = [labels[i] for i in np.flatnonzero(~keep)]
    if (~finite).any():
        logger.warning("dropped %d contract(s) with gaps", int((~finite).sum()))
    if flat.any():
        logger.warning("dropped %d zero-variance contract(s)", int(flat.sum()))
    z = (m[keep] - mean[keep, None]) / std[keep, None]
    return ReturnsPanel(z, mean[keep], std[keep], [labels[i] for i in np.flatnonzero(keep)],
                        None if dates is None else np.asarray(dates), dropped)


def panel_from_surfaces(surfaces: SurfacePanel) -> ReturnsPanel:
    """Flat standardized panel; returns are labelled by the later of their two dates."""
    r = raw_returns(surfaces.implied_vol, axis=0)
    flat = r.reshape(r.shape[0], -1).T
    return standardize(flat, surfaces.contracts(), surfaces.dates[1:])


@dataclass
class IvsTensor:
    """Standardized returns as (time, name, maturity, delta)."""

    tensor: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    dates: np.ndarray | None
    tickers: tuple
    maturities: tuple
    deltas: tuple

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return self.tensor.shape[1:]

    def flatten(self) -> np.ndarray:
        """N x T matrix in name -> maturity -> delta row order."""
        return self.tensor.reshape(self.tensor.shape[0], -1).T

    def contracts(self) -> list[tuple]:
        return [(t, m, d) for t in self.tickers for m in self.maturities for d in self.deltas]

    def to_panel(self) -> ReturnsPanel:
        return ReturnsPanel(self.flatten().copy(), self.means.ravel().copy(), self.stds.ravel().copy(),
                            self.contracts(), self.dates)

    @property
    def raw(self) -> np.ndarray:
        return self.tensor * self.stds[None] + self.means[None]

    @classmethod
    def from_panel(cls, panel: ReturnsPanel, tickers, maturities, deltas) -> "IvsTensor":
        """Unflatten a panel whose rows are exactly the full name x maturity x delta product."""
        tickers, maturities, deltas = tuple(tickers), tuple(maturities), tuple(deltas)
        expected = [(t, m, d) for t in tickers for m in maturities for d in deltas]
        if list(panel.contracts) != expected:
            have = set(panel.contracts)
            holes = [c for c in expected if c not in have]
            raise InputError(f"panel rows do not form a complete tensor; missing {holes[:10]}")
        shape = (len(tickers), len(maturities), len(deltas))
        return cls(panel.matrix.T.reshape(panel.T, *shape), panel.row_means.reshape(shape),
                   panel.row_stds.reshape(shape), panel.dates, tickers, maturities, deltas)


def complete_names(returns: np.ndarray) -> np.ndarray:
    """Boolean mask over names whose every contract has a usable series.

    ``returns`` is raw (time, name, maturity, delta).
    """
    finite = np.isfinite(returns).all(axis=0)
    with np.errstate(invalid="ignore"):
        std = np.nanstd(returns, axis=0, ddof=1)
        scale = np.nanmax(np.abs(returns), axis=0, initial=0.0)
    live = finite & (std > ZERO_STD_RTOL * np.maximum(scale, 1e-300))
    return live.all(axis=(1, 2))


def tensor_from_returns(returns: np.ndarray, dates=None, tickers=None, maturities=None, deltas=None,
                        on_hole: str = "raise") -> IvsTensor:
    """Standardize a raw (time, name, maturity, delta) return array along time.

    ``on_hole="raise"`` fails on the first contract that would be dropped;
    ``"drop_names"`` removes every name with an unusable contract.
    """
    returns = np.asarray(returns, dtype=float)
    t, n1, n2, n3 = returns.shape
    tickers = tuple(tickers) if tickers is not None else tuple(range(n1))
    maturities = tuple(maturities) if maturities is not None else tuple(range(n2))
    deltas = tuple(deltas) if deltas is not None else tuple(range(n3))
    if on_hole == "drop_names":
        keep = complete_names(returns)
        if not keep.any():
            raise InputError("no name has a complete surface in this window")
        returns = returns[:, keep]
        tickers = tuple(x for x, k in zip(tickers, keep) if k)
    elif on_hole != "raise":
        raise DomainError(f"unknown on_hole policy {on_hole!r}")
    labels = [(i, j, k) for i in range(len(tickers)) for j in range(n2) for k in range(n3)]
    panel = standardize(returns.reshape(t, -1).T, labels, dates)
    if panel.dropped:
        i, j, k = panel.dropped[0]
        raise InputError(f"contract ({i},{j},{k}) = ({tickers[i]}, {maturities[j]}, {deltas[k]}) "
                         f"has no usable return series; {len(panel.dropped)} hole(s) in the tensor")
    shape = (len(tickers), n2, n3)
    return IvsTensor(panel.matrix.T.reshape(t, *shape), panel.row_means.reshape(shape),
                     panel.row_stds.reshape(shape), panel.dates, tickers, maturities, deltas)


def build_tensor(surfaces: SurfacePanel, on_hole: str = "raise") -> IvsTensor:
    r = raw_returns(surfaces.implied_vol, axis=0)
    return tensor_from_returns(r, surfaces.dates[1:], surfaces.tickers, surfaces.maturities,
                               surfaces.deltas, on_hole=on_hole)
