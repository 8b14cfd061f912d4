"""Closed-form order-statistic algebra.

Conventions: order statistics are indexed ascending, ``X_{1:n} <= ... <=
X_{n:n}``, and ``(r, n)`` always refers to the rank of the upper member of a
consecutive pair, so the observed pair is ``(X_{r-1:n}, X_{r:n})`` with
``2 <= r <= n``.  Everything here is a pure function of immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats
from scipy.optimize import brentq

from .errors import NumericError

__all__ = [
    "ParentDistribution",
    "OrderRank",
    "uniform_parent",
    "beta_parent",
    "binom_constant",
    "os_cdf",
    "os_cdf_invert",
    "extreme_os_pdf",
    "consecutive_joint_pdf",
    "parent_cdf_from_max_tail",
    "parent_cdf_from_min_tail",
]

# Exact integer combinatorics stay exact up to this sample size; auction
# applications never get close, and refusing larger n is cheaper than
# auditing float behaviour downstream.
MAX_N = 30


@dataclass(frozen=True)
class OrderRank:
    """Rank ``r`` out of ``n``, ascending convention."""

    r: int
    n: int

    def __post_init__(self) -> None:
        if not (isinstance(self.r, (int, np.integer)) and isinstance(self.n, (int, np.integer))):
            raise ValueError("order rank (r, n) must be integers")
        if self.n < 2 or not (1 <= self.r <= self.n):
            raise ValueError(f"invalid order rank r={self.r}, n={self.n}")


@dataclass(frozen=True)
class ParentDistribution:
    """Continuous distribution on a bounded interval.

    Wraps the four roles needed throughout: CDF, PDF, quantile function and
    a sampler.  ``cdf``/``pdf``/``ppf`` must accept numpy arrays.  ``draw``
    is used by the simulator and defaults to inverse-transform sampling; the
    named constructors override it with native (much faster) samplers.
    """

    lower: float
    upper: float
    cdf: Callable[[np.ndarray], np.ndarray]
    pdf: Callable[[np.ndarray], np.ndarray]
    ppf: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"
    _sampler: Callable[[np.random.Generator, tuple], np.ndarray] | None = field(
        default=None, repr=False
    )

    def __post_init__(self) -> None:
        if not self.upper > self.lower:
            raise ValueError("parent support must have upper > lower")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self._sampler is not None:
            return self._sampler(rng, size)
        return self.ppf(rng.random(size))

    def mean(self, grid_points: int = 2001) -> float:
        """Mean by trapezoid quadrature of ``1 - F`` (bounded support)."""
        x = np.linspace(self.lower, self.upper, grid_points)
        return self.lower + float(np.trapezoid(1.0 - self.cdf(x), x))


def uniform_parent(lower: float = 0.0, upper: float = 1.0) -> ParentDistribution:
    """Uniform distribution on ``[lower, upper]``."""
    width = upper - lower

    def _sample(rng: np.random.Generator, size) -> np.ndarray:
        return lower + width * rng.random(size)

    return ParentDistribution(
        lower=lower,
        upper=upper,
        cdf=lambda x: np.clip((np.asarray(x, dtype=float) - lower) / width, 0.0, 1.0),
        pdf=lambda x: np.where(
            (np.asarray(x, dtype=float) >= lower) & (np.asarray(x, dtype=float) <= upper),
            1.0 / width,
            0.0,
        ),
        ppf=lambda q: lower + width * np.asarray(q, dtype=float),
        label=f"uniform[{lower:g},{upper:g}]",
        _sampler=_sample,
    )


def beta_parent(a: float, b: float, lower: float = 0.0, upper: float = 1.0) -> ParentDistribution:
    """Beta(a, b) distribution affinely mapped onto ``[lower, upper]``."""
    width = upper - lower
    frozen = stats.beta(a, b, loc=lower, scale=width)

    def _sample(rng: np.random.Generator, size) -> np.ndarray:
        return lower + width * rng.beta(a, b, size)

    return ParentDistribution(
        lower=lower,
        upper=upper,
        cdf=frozen.cdf,
        pdf=frozen.pdf,
        ppf=frozen.ppf,
        label=f"beta({a:g},{b:g})[{lower:g},{upper:g}]",
        _sampler=_sample,
    )


def binom_constant(r: int, n: int) -> int:
    """Combinatorial constant ``n! / ((r-1)! (n-r+1)!)`` of a consecutive pair.

    Exact integer arithmetic; equals ``C(n, r-1)``.
    """
    if not (isinstance(r, (int, np.integer)) and isinstance(n, (int, np.integer))):
        raise ValueError("r and n must be integers")
    if not (2 <= r <= n):
        raise ValueError(f"need 2 <= r <= n, got r={r}, n={n}")
    if n > MAX_N:
        raise ValueError(f"n={n} exceeds supported maximum {MAX_N}")
    return math.comb(int(n), int(r) - 1)


def os_cdf(u, r: int, n: int):
    """CDF of ``X_{r:n}`` expressed in the parent-CDF value ``u``.

    Equals the regularized incomplete beta ``I_u(r, n-r+1)``; strictly
    increasing in ``u`` on (0, 1).  Accepts scalars or arrays.
    """
    _check_rank(r, n)
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0.0) or np.any(u_arr > 1.0):
        raise ValueError("parent-CDF value u must lie in [0, 1]")
    out = special.betainc(r, n - r + 1, u_arr)
    return float(out) if np.isscalar(u) else out


def os_cdf_invert(p, r: int, n: int):
    """Parent-CDF value ``u`` solving ``os_cdf(u, r, n) = p``.

    Uses the inverse regularized incomplete beta, with a bracketed
    root-finding fallback whenever the residual exceeds 1e-12.
    """
    _check_rank(r, n)
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
        raise ValueError("probability p must lie in [0, 1]")
    u = special.betaincinv(r, n - r + 1, p_arr)
    resid = np.abs(special.betainc(r, n - r + 1, u) - p_arr)
    bad = np.atleast_1d(resid > 1e-12)
    if bad.any():
        u = np.atleast_1d(np.array(u, dtype=float, copy=True))
        flat_p = np.atleast_1d(p_arr)
        for idx in np.flatnonzero(bad):
            u[idx] = brentq(
                lambda t: special.betainc(r, n - r + 1, t) - flat_p[idx],
                0.0,
                1.0,
                xtol=1e-14,
            )
        u = u.reshape(np.shape(p_arr))
    return float(u) if np.isscalar(p) else u


def extreme_os_pdf(parent: ParentDistribution, x, m: int, side: str):
    """Density of the max (``side='max'``) or min (``side='min'``) of ``m`` draws.

    ``m = 1`` returns the parent density for either side.
    """
    if m < 1:
        raise ValueError(f"sample size m must be >= 1, got {m}")
    if side not in ("min", "max"):
        raise ValueError(f"side must be 'min' or 'max', got {side!r}")
    x_arr = np.asarray(x, dtype=float)
    u = parent.cdf(x_arr)
    base = u if side == "max" else 1.0 - u
    out = m * base ** (m - 1) * parent.pdf(x_arr)
    return float(out) if np.isscalar(x) else out


def consecutive_joint_pdf(parent: ParentDistribution, x, y, r: int, n: int):
    """Joint density of the consecutive pair ``(X_{r-1:n}, X_{r:n})`` at (x, y).

    Semi-separable form: a known constant times the density of the max of
    ``r-1`` draws at ``x`` times the density of the min of ``n-r+1`` draws
    at ``y``, and exactly zero when ``x > y``.
    """
    _check_rank(r, n)
    if r < 2:
        raise ValueError("consecutive pair needs r >= 2")
    c = binom_constant(r, n)
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    val = (
        c
        * extreme_os_pdf(parent, x_arr, r - 1, "max")
        * extreme_os_pdf(parent, y_arr, n - r + 1, "min")
    )
    out = np.where(x_arr <= y_arr, val, 0.0)
    return float(out) if (np.isscalar(x) and np.isscalar(y)) else out


def parent_cdf_from_max_tail(I, m: int):
    """Parent CDF from the lower cumulative of a max-of-``m`` density: ``I**(1/m)``."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    I_arr = np.asarray(I, dtype=float)
    if np.any(I_arr < 0.0):
        raise NumericError(
            "negative cumulative integral: clip the estimated density before inverting"
        )
    out = I_arr ** (1.0 / m)
    return float(out) if np.isscalar(I) else out


def parent_cdf_from_min_tail(I, m: int):
    """Parent CDF from the upper-tail integral of a min-of-``m`` density: ``1 - I**(1/m)``."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    I_arr = np.asarray(I, dtype=float)
    if np.any(I_arr < 0.0):
        raise NumericError(
            "negative tail integral: clip the estimated density before inverting"
        )
    out = 1.0 - I_arr ** (1.0 / m)
    return float(out) if np.isscalar(I) else out


def _check_rank(r: int, n: int) -> None:
    if not (1 <= r <= n) or n < 2:
        raise ValueError(f"invalid order rank r={r}, n={n}")
    if n > MAX_N:
        raise ValueError(f"n={n} exceeds supported maximum {MAX_N}")
