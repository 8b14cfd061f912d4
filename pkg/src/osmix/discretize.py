"""Quantile cutoffs, interval schemes, and estimated cell-probability matrices.

A *scheme* splits the bid support at one cutoff into a low and a high
segment and puts the same number of disjoint cells in each.  The observed
pair then feeds a square matrix of joint cell frequencies: entry (i, j) is
the share of auctions with ``x_lo`` in low cell i and ``x_hi`` in high cell
j (optionally also filtering on the instrument).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import DataError, DegenerateGridError, EstimationError

__all__ = [
    "Discretization",
    "CellMatrix",
    "quantile_grid",
    "enumerate_schemes",
    "cell_matrix",
    "cell_row_at_point",
    "cell_rows_at_points",
    "cell_cols_at_points",
    "epanechnikov_bandwidth",
]

logger = logging.getLogger(__name__)

# Silverman's rule-of-thumb factor rescaled from the Gaussian to the
# Epanechnikov kernel's canonical bandwidth (ratio 15^(1/5) / (4/(3))^... =
# 1.7188 / 0.7764).
_EPA_SILVERMAN = 0.9 * 1.7188 / 0.7764


@dataclass(frozen=True)
class Discretization:
    """One cutoff plus matching cell partitions of the two segments."""

    cutoff: float
    low_cells: tuple[tuple[float, float], ...]
    high_cells: tuple[tuple[float, float], ...]
    scheme_id: int = 0

    def __post_init__(self) -> None:
        if len(self.low_cells) != len(self.high_cells) or not self.low_cells:
            raise DataError("low and high segments need the same positive cell count")
        for cells, name in ((self.low_cells, "low"), (self.high_cells, "high")):
            for a, b in cells:
                if not b > a:
                    raise DataError(f"empty {name} cell [{a}, {b}]")
            for (a1, b1), (a2, b2) in zip(cells, cells[1:]):
                if a2 < b1:
                    raise DataError(f"overlapping {name} cells")
        if not self.low_cells[-1][1] <= self.cutoff <= self.high_cells[0][0]:
            raise DataError("cells must sit on their side of the cutoff")

    @property
    def n_cells(self) -> int:
        return len(self.low_cells)

    @property
    def low_span(self) -> tuple[float, float]:
        return (self.low_cells[0][0], self.low_cells[-1][1])

    @property
    def high_span(self) -> tuple[float, float]:
        return (self.high_cells[0][0], self.high_cells[-1][1])

    def min_cell_width(self) -> float:
        return min(b - a for a, b in self.low_cells + self.high_cells)

    def to_json(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "low_cells": [list(c) for c in self.low_cells],
            "high_cells": [list(c) for c in self.high_cells],
        }


@dataclass(frozen=True)
class CellMatrix:
    """Estimated joint cell probabilities for one scheme.

    ``sample_size`` is the total record count behind the frequencies (it
    stays the denominator under instrument filtering); ``None`` marks a
    population (noise-free) matrix.
    """

    entries: np.ndarray
    sample_size: Optional[int]
    w_filter: Optional[int] = None

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise DataError("cell matrix must be square")
        if np.any(e < -1e-15) or e.sum() > 1.0 + 1e-9:
            raise DataError("cell probabilities must be nonnegative and sum to <= 1")


def quantile_grid(samples: np.ndarray, R: int) -> np.ndarray:
    """``R`` interior cut values at levels ``1/(R+1), ..., R/(R+1)``.

    Uses the left-continuous (type-1) empirical quantile and drops
    duplicates; fewer than ``R`` distinct values is an error.
    """
    if R < 1:
        raise ValueError(f"need R >= 1 cut values, got {R}")
    samples = np.asarray(samples, dtype=float)
    if samples.size < R + 1:
        raise DegenerateGridError(f"{samples.size} samples cannot support {R} quantiles")
    levels = np.arange(1, R + 1) / (R + 1)
    cuts = np.unique(np.quantile(samples, levels, method="inverted_cdf"))
    if cuts.size < R:
        raise DegenerateGridError(
            f"only {cuts.size} distinct quantiles available for R={R}"
        )
    return cuts


def enumerate_schemes(
    dataset: Dataset, n_cells: int, R1: int, Rl: int, Rh: int
) -> list[Discretization]:
    """All quantile-based schemes with ``n_cells`` cells per segment.

    Cutoff candidates are quantiles of the pooled pair sample; interior grid
    candidates are quantiles of the pooled sample restricted to each
    segment.  Every ``n_cells - 1``-subset of each candidate grid defines a
    partition, for up to ``R1 * C(Rl, n_cells-1) * C(Rh, n_cells-1)``
    schemes; candidates that leave a segment without enough distinct values
    are skipped with a logged reason.
    """
    if n_cells < 1:
        raise ValueError("need at least one cell per segment")
    if Rl < n_cells - 1 or Rh < n_cells - 1:
        raise ValueError("candidate grids must offer at least n_cells-1 points")
    pooled = dataset.pooled_bids()
    lo, hi = dataset.support
    cutoffs = quantile_grid(pooled, R1)

    schemes: list[Discretization] = []
    scheme_id = 0
    for cutoff in cutoffs:
        if not lo < cutoff < hi:
            logger.info("skipping cutoff %.6g: outside open support", cutoff)
            continue
        low_sample = pooled[pooled <= cutoff]
        high_sample = pooled[pooled > cutoff]
        try:
            low_grid = quantile_grid(low_sample, Rl) if n_cells > 1 else np.empty(0)
            high_grid = quantile_grid(high_sample, Rh) if n_cells > 1 else np.empty(0)
        except DegenerateGridError as exc:
            logger.info("skipping cutoff %.6g: %s", cutoff, exc)
            continue
        low_grid = low_grid[(low_grid > lo) & (low_grid < cutoff)]
        high_grid = high_grid[(high_grid > cutoff) & (high_grid < hi)]
        for low_pick in combinations(low_grid, n_cells - 1):
            low_edges = np.concatenate([[lo], low_pick, [cutoff]])
            for high_pick in combinations(high_grid, n_cells - 1):
                high_edges = np.concatenate([[cutoff], high_pick, [hi]])
                schemes.append(
                    Discretization(
                        cutoff=float(cutoff),
                        low_cells=_edges_to_cells(low_edges),
                        high_cells=_edges_to_cells(high_edges),
                        scheme_id=scheme_id,
                    )
                )
                scheme_id += 1
    if not schemes:
        raise DataError("no valid discretization scheme could be built")
    return schemes


def _edges_to_cells(edges: np.ndarray) -> tuple[tuple[float, float], ...]:
    return tuple((float(a), float(b)) for a, b in zip(edges[:-1], edges[1:]))


def _assign_cells(x: np.ndarray, cells: Sequence[tuple[float, float]], seg_end: float) -> np.ndarray:
    """Cell index per point, -1 outside; left-closed right-open, last cell closed."""
    idx = np.full(x.shape, -1, dtype=np.int64)
    for i, (a, b) in enumerate(cells):
        closed_right = b >= seg_end
        mask = (x >= a) & ((x <= b) if closed_right else (x < b))
        idx[mask] = i
    return idx


def _w_mask(dataset: Dataset, w_filter: Optional[int]) -> np.ndarray:
    if w_filter is None:
        return np.ones(len(dataset), dtype=bool)
    if w_filter not in (0, 1):
        raise ValueError(f"w_filter must be None, 0 or 1, got {w_filter!r}")
    return dataset.w == w_filter


def cell_matrix(dataset: Dataset, scheme: Discretization, w_filter: Optional[int] = None) -> CellMatrix:
    """Joint cell frequencies ``(1/M) #{x_lo in l_i, x_hi in h_j [, W = w]}``."""
    M = len(dataset)
    keep = _w_mask(dataset, w_filter)
    li = _assign_cells(dataset.x_lo, scheme.low_cells, scheme.low_span[1])
    hj = _assign_cells(dataset.x_hi, scheme.high_cells, scheme.high_span[1])
    ok = keep & (li >= 0) & (hj >= 0)
    k = scheme.n_cells
    counts = np.zeros((k, k))
    np.add.at(counts, (li[ok], hj[ok]), 1.0)
    return CellMatrix(entries=counts / M, sample_size=M, w_filter=w_filter)


def epanechnikov_bandwidth(sample: np.ndarray) -> float:
    """Silverman rule-of-thumb bandwidth for the Epanechnikov kernel."""
    sample = np.asarray(sample, dtype=float)
    m = sample.size
    if m < 2:
        raise EstimationError("cannot pick a bandwidth from fewer than 2 points")
    sd = float(np.std(sample))
    iqr = float(np.subtract(*np.percentile(sample, [75, 25])))
    scale = min(sd, iqr / 1.34) if iqr > 0 else sd
    if scale <= 0:
        raise EstimationError("bandwidth collapsed: sample has no spread")
    return _EPA_SILVERMAN * scale * m ** (-0.2)


def _epa_reflected(
    x: np.ndarray,
    pts: np.ndarray,
    h: float,
    reflect_lo: Optional[float] = None,
    reflect_hi: Optional[float] = None,
) -> np.ndarray:
    """Epanechnikov kernel weights, optionally reflected at support edges.

    Reflection is only correct where the density genuinely ends (the
    support boundary); across an interior cutoff the sample continues and
    plain kernel weights are already consistent.  Returns the
    (len(x), len(pts)) matrix of kernel values.
    """
    centers = [pts]
    if reflect_lo is not None:
        centers.append(2 * reflect_lo - pts)
    if reflect_hi is not None:
        centers.append(2 * reflect_hi - pts)
    out = np.zeros((x.size, pts.size))
    for center in centers:
        u = (x[:, None] - center[None, :]) / h
        mask = np.abs(u) < 1.0
        out[mask] += 0.75 * (1.0 - u[mask] ** 2)
    return out / h


def cell_rows_at_points(
    dataset: Dataset,
    scheme: Discretization,
    xs: np.ndarray,
    w_filter: Optional[int] = None,
    bandwidth: Optional[float] = None,
) -> np.ndarray:
    """Kernel-smoothed joint rows: column j estimates the density of
    ``x_lo`` at each x among records with ``x_hi`` in high cell j, scaled by
    that cell's empirical mass (so integrating a column over the low segment
    approximates the matching column sum of :func:`cell_matrix`).

    The Epanechnikov kernel is reflected at the lower support boundary
    only; at the interior cutoff the conditional density continues smoothly
    and records just beyond it provide the continuation sample.
    """
    xs = np.asarray(xs, dtype=float)
    lo, cutoff = scheme.low_span
    if np.any(xs < lo - 1e-12) or np.any(xs > cutoff + 1e-12):
        raise ValueError("evaluation points must lie in the low segment")
    M = len(dataset)
    keep = _w_mask(dataset, w_filter)
    hj = _assign_cells(dataset.x_hi, scheme.high_cells, scheme.high_span[1])
    keep &= hj >= 0
    if bandwidth is None:
        bandwidth = epanechnikov_bandwidth(dataset.x_lo[keep])
    if bandwidth <= 1e-12 * (dataset.support[1] - dataset.support[0]):
        raise EstimationError(f"bandwidth {bandwidth} below usable resolution")

    k = scheme.n_cells
    rows = np.zeros((xs.size, k))
    idx_all = np.flatnonzero(keep)
    chunk = max(1, int(4e6 // max(xs.size, 1)))
    for start in range(0, idx_all.size, chunk):
        sel = idx_all[start : start + chunk]
        weights = _epa_reflected(
            xs, dataset.x_lo[sel], bandwidth, reflect_lo=dataset.support[0]
        )
        for j in range(k):
            cols = hj[sel] == j
            if cols.any():
                rows[:, j] += weights[:, cols].sum(axis=1)
    return rows / M


def cell_row_at_point(
    dataset: Dataset,
    scheme: Discretization,
    x: float,
    w_filter: Optional[int] = None,
    bandwidth: Optional[float] = None,
) -> np.ndarray:
    """Single-point version of :func:`cell_rows_at_points`."""
    return cell_rows_at_points(dataset, scheme, np.array([x]), w_filter, bandwidth)[0]


def cell_cols_at_points(
    dataset: Dataset,
    scheme: Discretization,
    ys: np.ndarray,
    w_filter: Optional[int] = None,
    bandwidth: Optional[float] = None,
) -> np.ndarray:
    """High-side analogue of :func:`cell_rows_at_points`: column i estimates
    the density of ``x_hi`` at each y among records with ``x_lo`` in low
    cell i, reflected at the upper support boundary only.
    """
    ys = np.asarray(ys, dtype=float)
    cutoff, hi = scheme.high_span
    if np.any(ys < cutoff - 1e-12) or np.any(ys > hi + 1e-12):
        raise ValueError("evaluation points must lie in the high segment")
    M = len(dataset)
    keep = _w_mask(dataset, w_filter)
    li = _assign_cells(dataset.x_lo, scheme.low_cells, scheme.low_span[1])
    keep &= li >= 0
    if bandwidth is None:
        bandwidth = epanechnikov_bandwidth(dataset.x_hi[keep])
    if bandwidth <= 1e-12 * (dataset.support[1] - dataset.support[0]):
        raise EstimationError(f"bandwidth {bandwidth} below usable resolution")

    k = scheme.n_cells
    cols_out = np.zeros((ys.size, k))
    idx_all = np.flatnonzero(keep)
    chunk = max(1, int(4e6 // max(ys.size, 1)))
    for start in range(0, idx_all.size, chunk):
        sel = idx_all[start : start + chunk]
        weights = _epa_reflected(
            ys, dataset.x_hi[sel], bandwidth, reflect_hi=dataset.support[1]
        )
        for i in range(k):
            rows_i = li[sel] == i
            if rows_i.any():
                cols_out[:, i] += weights[:, rows_i].sum(axis=1)
    return cols_out / M
