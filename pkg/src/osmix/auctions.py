"""Equilibrium bidding and the inverse map from bid to value distributions.

Ascending auctions: bidding one's value is weakly dominant, so the bid
distribution equals the value distribution.  First-price auctions: the
symmetric equilibrium bid shades below the value, and the observed bid
distribution is mapped back to values through the first-order condition
``value = bid + F_bid / ((n-1) f_bid)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import isotonic_regression

from .errors import DataError, DegenerateDensityError, NumericError
from .orderstats import ParentDistribution

__all__ = [
    "AuctionFormat",
    "BidStrategy",
    "ascending_bid",
    "fp_equilibrium_bid",
    "fp_bid_grid",
    "make_bid_strategy",
    "gpv_invert",
    "value_cdf_from_bid_cdf",
    "GpvValueCdf",
]

logger = logging.getLogger(__name__)

# Below this winning probability the shading integral is 0/0; the limit of
# the bid at the lower support end is the lower end itself.
_WIN_PROB_FLOOR = 1e-300

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class AuctionFormat(str, Enum):
    ASCENDING = "ascending"
    FIRST_PRICE = "first_price"


def ascending_bid(v):
    """Weakly dominant ascending-auction bid: the value itself."""
    return v


def _cum_gauss(fn: Callable[[np.ndarray], np.ndarray], grid: np.ndarray) -> np.ndarray:
    """Cumulative integral of ``fn`` along ``grid`` by per-panel Gauss-Legendre."""
    a = grid[:-1]
    half = 0.5 * (grid[1:] - a)
    nodes = a[:, None] + half[:, None] * (_GL_NODES[None, :] + 1.0)
    panel = half * (fn(nodes.ravel()).reshape(nodes.shape) @ _GL_WEIGHTS)
    out = np.empty_like(grid)
    out[0] = 0.0
    np.cumsum(panel, out=out[1:])
    return out


def fp_equilibrium_bid(value_dist: ParentDistribution, n: int, v: float) -> float:
    """Symmetric first-price equilibrium bid for value ``v`` against ``n-1`` rivals.

    ``b(v) = v - int_lower^v F(t)^(n-1) dt / F(v)^(n-1)``; strictly increasing
    with ``b(lower) = lower``.
    """
    if n < 2:
        raise ValueError(f"first-price equilibrium needs n >= 2, got {n}")
    lo = value_dist.lower
    if not (lo <= v <= value_dist.upper):
        raise ValueError(f"value {v} outside support [{lo}, {value_dist.upper}]")
    win_prob = float(value_dist.cdf(np.asarray(v))) ** (n - 1)
    if win_prob < _WIN_PROB_FLOOR:
        return lo
    integral, abserr = quad(
        lambda t: value_dist.cdf(np.asarray(t)) ** (n - 1), lo, v, limit=200
    )
    if not np.isfinite(integral) or abserr > 1e-8 * max(1.0, abs(integral)):
        raise NumericError(
            f"shading-integral quadrature failed at v={v}: value={integral}, abserr={abserr}"
        )
    return v - integral / win_prob


def fp_bid_grid(
    value_dist: ParentDistribution, n: int, v_grid: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equilibrium bids plus the implied bid CDF/PDF along a value grid.

    Returns ``(bids, bid_cdf, bid_pdf)`` where ``bid_cdf[i] = F(v_i)`` and
    ``bid_pdf[i] = f(v_i) / b'(v_i)`` by the chain rule, with
    ``b'(v) = (n-1) f(v) I(v) / F(v)^n`` sharing the same cumulative integral
    ``I`` as the bids themselves.
    """
    if n < 2:
        raise ValueError(f"first-price equilibrium needs n >= 2, got {n}")
    v_grid = np.asarray(v_grid, dtype=float)
    F = value_dist.cdf(v_grid)
    f = value_dist.pdf(v_grid)
    I = _cum_gauss(lambda t: value_dist.cdf(t) ** (n - 1), v_grid)
    win = F ** (n - 1)
    safe = win > _WIN_PROB_FLOOR
    bids = np.where(safe, v_grid - np.divide(I, win, where=safe, out=np.zeros_like(I)), value_dist.lower)
    bprime = np.divide(
        (n - 1) * f * I, F**n, where=F**n > _WIN_PROB_FLOOR, out=np.full_like(F, np.nan)
    )
    # At the lower end b' is 0/0; downstream users never need the pdf there
    # because F_bid = 0 kills the shading term.  Copy the nearest interior
    # slope so the array stays finite.
    if not np.all(np.isfinite(bprime)):
        interior = np.flatnonzero(np.isfinite(bprime) & (bprime > 0))
        if interior.size == 0:
            raise NumericError("bid derivative not computable anywhere on the grid")
        bprime[: interior[0]] = bprime[interior[0]]
        bprime[interior[-1] + 1 :] = bprime[interior[-1]]
    bid_pdf = f / bprime
    return bids, F, bid_pdf


@dataclass(frozen=True)
class BidStrategy:
    """Monotone map from values to equilibrium bids for one (format, n) pair."""

    format: AuctionFormat
    n: int
    value_dist: ParentDistribution
    bid_fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v):
        return self.bid_fn(np.asarray(v, dtype=float))


def make_bid_strategy(
    fmt: AuctionFormat, value_dist: ParentDistribution, n: int, grid_points: int = 513
) -> BidStrategy:
    """Build a vectorized bid strategy.

    First-price strategies are tabulated on ``grid_points`` values and
    evaluated by monotone (PCHIP) interpolation, which keeps bulk simulation
    fast without breaking monotonicity.
    """
    if fmt == AuctionFormat.ASCENDING:
        return BidStrategy(fmt, n, value_dist, lambda v: v)
    v_grid = np.linspace(value_dist.lower, value_dist.upper, grid_points)
    bids, _, _ = fp_bid_grid(value_dist, n, v_grid)
    interp = PchipInterpolator(v_grid, bids, extrapolate=False)

    def _bid(v: np.ndarray) -> np.ndarray:
        out = interp(np.clip(v, value_dist.lower, value_dist.upper))
        return np.asarray(out, dtype=float)

    return BidStrategy(fmt, n, value_dist, _bid)


def gpv_invert(b, F_bid, f_bid, n: int):
    """Value implied by bid ``b`` with bid CDF/density ``(F_bid, f_bid)``.

    ``value = b + F_bid / ((n-1) f_bid)``.
    """
    if n < 2:
        raise ValueError(f"inversion needs n >= 2, got {n}")
    f_arr = np.asarray(f_bid, dtype=float)
    if np.any(f_arr <= 0.0):
        raise DegenerateDensityError(
            "bid density must be positive for the first-order-condition inversion"
        )
    out = np.asarray(b, dtype=float) + np.asarray(F_bid, dtype=float) / ((n - 1) * f_arr)
    return float(out) if np.isscalar(b) else out


@dataclass(frozen=True)
class GpvValueCdf:
    """Value CDF recovered from a sampled bid CDF."""

    values: np.ndarray
    cdf: np.ndarray
    floor_hits: int


def value_cdf_from_bid_cdf(
    bid_grid: np.ndarray,
    cdf_values: np.ndarray,
    n: int,
    monotone_tol: float = 1e-9,
) -> GpvValueCdf:
    """Map a sampled bid CDF to the implied value CDF.

    Differentiates the grid CDF by central differences, clips the density at
    a positive floor (counting how often the floor binds), pushes each grid
    bid through :func:`gpv_invert`, and returns the CDF re-indexed on the
    value grid after an isotonic projection of the values.
    """
    b = np.asarray(bid_grid, dtype=float)
    F = np.asarray(cdf_values, dtype=float)
    if b.ndim != 1 or b.shape != F.shape or b.size < 3:
        raise DataError("bid grid and CDF must be matching 1-D arrays with >= 3 points")
    if np.any(np.diff(b) <= 0):
        raise DataError("bid grid must be strictly increasing")
    diffs = np.diff(F)
    if np.any(diffs < -monotone_tol):
        raise DataError("bid CDF is non-monotone beyond tolerance")
    F = np.minimum.accumulate(np.clip(F, 0.0, 1.0)[::-1])[::-1]

    width = b[-1] - b[0]
    floor = 1e-6 / width
    dens = np.empty_like(F)
    dens[1:-1] = (F[2:] - F[:-2]) / (b[2:] - b[:-2])
    dens[0] = (F[1] - F[0]) / (b[1] - b[0])
    dens[-1] = (F[-1] - F[-2]) / (b[-1] - b[-2])

    # A genuine plateau (zero CDF increment across the whole stencil) means
    # zero density, which the inversion cannot absorb; tiny positive slopes
    # are clipped to the floor instead.
    plateau = np.zeros_like(dens, dtype=bool)
    plateau[1:-1] = F[2:] == F[:-2]
    plateau[0] = F[1] == F[0]
    plateau[-1] = F[-1] == F[-2]
    if np.any(plateau):
        raise DegenerateDensityError(
            f"bid CDF has a flat segment ({int(plateau.sum())} grid points with zero density)"
        )
    floor_hits = int(np.count_nonzero(dens < floor))
    if floor_hits:
        logger.warning("bid-density floor binds at %d grid points", floor_hits)
    dens = np.maximum(dens, floor)

    values = gpv_invert(b, F, dens, n)
    values = isotonic_regression(values).x
    return GpvValueCdf(values=values, cdf=F, floor_hits=floor_hits)
