"""Joint-distribution sources feeding the identification pipelines.

Estimators never touch datasets or data-generating processes directly; they
consume a *source* exposing cell matrices, pointwise joint rows/columns, and
the marginal CDF of the upper order statistic.  Two implementations:

* :class:`EmpiricalSource` — frequency counts and boundary-corrected kernel
  smoothing on an observed dataset;
* :class:`PopulationSource` — exact closed-form integrals of the mixture
  joint density, used for noise-free oracle runs and tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import discretize as disc
from .auctions import AuctionFormat, fp_bid_grid
from .data import CANONICAL, Dataset
from .discretize import CellMatrix, Discretization
from .errors import ConfigError, DataError
from .orderstats import ParentDistribution, binom_constant, os_cdf
from .simulate import MixtureDGP

__all__ = ["EmpiricalSource", "PopulationSource", "bid_distribution"]


@dataclass
class EmpiricalSource:
    """Dataset-backed source (canonical orientation required)."""

    dataset: Dataset

    def __post_init__(self) -> None:
        if self.dataset.orientation != CANONICAL:
            raise DataError("canonicalize the dataset before estimation")
        self.dataset = self.dataset.estimation_view()
        self._x_hi_sorted = np.sort(self.dataset.x_hi)

    @property
    def sample_size(self) -> Optional[int]:
        return len(self.dataset)

    @property
    def r(self) -> int:
        return self.dataset.r

    @property
    def n(self) -> Optional[int]:
        return self.dataset.n

    @property
    def support(self) -> tuple[float, float]:
        return self.dataset.support

    @property
    def has_instrument(self) -> bool:
        return bool(np.any(self.dataset.w == 0) and np.any(self.dataset.w == 1))

    def schemes(self, n_cells: int, R1: int, Rl: int, Rh: int) -> list[Discretization]:
        return disc.enumerate_schemes(self.dataset, n_cells, R1, Rl, Rh)

    def cell_matrix(self, scheme: Discretization, w_filter: Optional[int] = None) -> CellMatrix:
        return disc.cell_matrix(self.dataset, scheme, w_filter)

    def low_rows(
        self, scheme: Discretization, xs: np.ndarray, w_filter: Optional[int] = None
    ) -> np.ndarray:
        return disc.cell_rows_at_points(self.dataset, scheme, xs, w_filter)

    def high_cols(
        self, scheme: Discretization, ys: np.ndarray, w_filter: Optional[int] = None
    ) -> np.ndarray:
        return disc.cell_cols_at_points(self.dataset, scheme, ys, w_filter)

    def upper_cdf(self, xs: np.ndarray) -> np.ndarray:
        """Empirical CDF of ``x_hi``."""
        return np.searchsorted(self._x_hi_sorted, np.asarray(xs), side="right") / len(
            self.dataset
        )


def bid_distribution(
    value_dist: ParentDistribution, fmt: AuctionFormat, n: int, grid_points: int = 2049
) -> ParentDistribution:
    """Population bid distribution implied by a value distribution.

    Ascending: identical to the value distribution.  First price: the value
    distribution pushed through the equilibrium strategy, tabulated on a
    dense grid and interpolated monotonically.
    """
    if fmt == AuctionFormat.ASCENDING:
        return value_dist
    v_grid = np.linspace(value_dist.lower, value_dist.upper, grid_points)
    bids, F, f_bid = fp_bid_grid(value_dist, n, v_grid)
    cdf_interp = PchipInterpolator(bids, F, extrapolate=False)
    pdf_interp = PchipInterpolator(bids, f_bid, extrapolate=False)
    b_lo, b_hi = float(bids[0]), float(bids[-1])

    def _cdf(x):
        x = np.asarray(x, dtype=float)
        out = cdf_interp(np.clip(x, b_lo, b_hi))
        return np.where(x >= b_hi, 1.0, np.where(x <= b_lo, 0.0, out))

    def _pdf(x):
        x = np.asarray(x, dtype=float)
        out = pdf_interp(np.clip(x, b_lo, b_hi))
        return np.where((x < b_lo) | (x > b_hi), 0.0, out)

    inv = PchipInterpolator(F, bids, extrapolate=False)
    return ParentDistribution(
        lower=b_lo,
        upper=b_hi,
        cdf=_cdf,
        pdf=_pdf,
        ppf=lambda q: np.asarray(inv(np.clip(q, 0.0, 1.0)), dtype=float),
        label=f"fp-bids(n={n})<{value_dist.label}>",
    )


@dataclass
class PopulationSource:
    """Exact mixture joint distribution of the canonical pair.

    Cell masses use the closed-form segment integrals of the semi-separable
    joint density: over a low cell the max-of-(r-1) mass is
    ``F^k(b)^(r-1) - F^k(a)^(r-1)``, over a high cell the min-of-(n-r+1)
    mass is ``(1-F^k(a))^(n-r+1) - (1-F^k(b))^(n-r+1)`` times the pair
    constant.  Under random competition each (state, n) pair contributes
    with weight ``p_{k,n}``.
    """

    dgp: MixtureDGP
    rank: int
    _bid_dists: list = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.rank < 2:
            raise ConfigError("canonical rank must be >= 2")
        if self.rank > self.dgp.n_min:
            raise ConfigError(
                f"rank {self.rank} exceeds the smallest competition {self.dgp.n_min}"
            )
        ns = [int(self.dgp.n)] if self.dgp.is_known_n else [int(v) for v in self.dgp.n_support]
        self._ns = ns
        self._bid_dists = [
            [bid_distribution(vd, self.dgp.format, n_val) for n_val in ns]
            for vd in self.dgp.value_dists
        ]
        if self.dgp.is_known_n:
            self._pkn = self.dgp.state_weights[:, None]
        else:
            self._pkn = self.dgp.weights_kn

    @property
    def sample_size(self) -> None:
        return None

    @property
    def r(self) -> int:
        return self.rank

    @property
    def n(self) -> Optional[int]:
        return self.dgp.n

    @property
    def support(self) -> tuple[float, float]:
        los = [d[0].lower for d in self._bid_dists]
        his = [max(dn.upper for dn in d) for d in self._bid_dists]
        return (min(los), max(his))

    @property
    def has_instrument(self) -> bool:
        return self.dgp.instrument is not None

    def _w_weight(self, k: int, w_filter: Optional[int]) -> float:
        if w_filter is None:
            return 1.0
        q0 = float(self.dgp.instrument_or_trivial()[k])
        return q0 if w_filter == 0 else 1.0 - q0

    def _low_mass(self, k: int, i_n: int, a: float, b: float) -> float:
        F = self._bid_dists[k][i_n].cdf
        r = self.rank
        return float(F(np.asarray(b)) ** (r - 1) - F(np.asarray(a)) ** (r - 1))

    def _high_mass(self, k: int, i_n: int, a: float, b: float) -> float:
        F = self._bid_dists[k][i_n].cdf
        m = self._ns[i_n] - self.rank + 1
        c = binom_constant(self.rank, self._ns[i_n])
        return float(
            c * ((1.0 - F(np.asarray(a))) ** m - (1.0 - F(np.asarray(b))) ** m)
        )

    def cell_matrix(self, scheme: Discretization, w_filter: Optional[int] = None) -> CellMatrix:
        k_cells = scheme.n_cells
        out = np.zeros((k_cells, k_cells))
        for k in range(self.dgp.K):
            wq = self._w_weight(k, w_filter)
            for i_n in range(len(self._ns)):
                weight = self._pkn[k, i_n] * wq
                low = np.array([self._low_mass(k, i_n, a, b) for a, b in scheme.low_cells])
                high = np.array([self._high_mass(k, i_n, a, b) for a, b in scheme.high_cells])
                out += weight * np.outer(low, high)
        return CellMatrix(entries=out, sample_size=None, w_filter=w_filter)

    def low_rows(
        self, scheme: Discretization, xs: np.ndarray, w_filter: Optional[int] = None
    ) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        out = np.zeros((xs.size, scheme.n_cells))
        r = self.rank
        for k in range(self.dgp.K):
            wq = self._w_weight(k, w_filter)
            for i_n in range(len(self._ns)):
                dist = self._bid_dists[k][i_n]
                dens = (r - 1) * dist.cdf(xs) ** (r - 2) * dist.pdf(xs) if r > 2 else dist.pdf(xs)
                high = np.array([self._high_mass(k, i_n, a, b) for a, b in scheme.high_cells])
                out += self._pkn[k, i_n] * wq * np.outer(dens, high)
        return out

    def high_cols(
        self, scheme: Discretization, ys: np.ndarray, w_filter: Optional[int] = None
    ) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        out = np.zeros((ys.size, scheme.n_cells))
        r = self.rank
        for k in range(self.dgp.K):
            wq = self._w_weight(k, w_filter)
            for i_n, n_val in enumerate(self._ns):
                dist = self._bid_dists[k][i_n]
                m = n_val - r + 1
                c = binom_constant(r, n_val)
                dens = c * m * (1.0 - dist.cdf(ys)) ** (m - 1) * dist.pdf(ys)
                low = np.array([self._low_mass(k, i_n, a, b) for a, b in scheme.low_cells])
                out += self._pkn[k, i_n] * wq * np.outer(dens, low)
        return out

    def upper_cdf(self, xs: np.ndarray) -> np.ndarray:
        """Mixture CDF of the canonical upper order statistic ``X_{r:n}``."""
        xs = np.asarray(xs, dtype=float)
        out = np.zeros(xs.shape)
        for k in range(self.dgp.K):
            for i_n, n_val in enumerate(self._ns):
                u = self._bid_dists[k][i_n].cdf(xs)
                out += self._pkn[k, i_n] * os_cdf(u, self.rank, n_val)
        return out

    def lower_cdf(self, xs: np.ndarray) -> np.ndarray:
        """Mixture CDF of the lower order statistic ``X_{r-1:n}``."""
        xs = np.asarray(xs, dtype=float)
        out = np.zeros(xs.shape)
        for k in range(self.dgp.K):
            for i_n, n_val in enumerate(self._ns):
                u = self._bid_dists[k][i_n].cdf(xs)
                out += self._pkn[k, i_n] * os_cdf(u, self.rank - 1, n_val)
        return out

    def pooled_cdf(self, xs: np.ndarray) -> np.ndarray:
        return 0.5 * (self.lower_cdf(xs) + self.upper_cdf(xs))

    def _pooled_quantile(self, q: float) -> float:
        lo, hi = self.support
        return brentq(lambda t: float(self.pooled_cdf(np.asarray(t))) - q, lo, hi, xtol=1e-12)

    def schemes(self, n_cells: int, R1: int, Rl: int, Rh: int) -> list[Discretization]:
        """Population analogue of the quantile-based scheme enumeration."""
        lo, hi = self.support
        out: list[Discretization] = []
        scheme_id = 0
        for i1 in range(1, R1 + 1):
            g_cut = i1 / (R1 + 1)
            cutoff = self._pooled_quantile(g_cut)
            low_grid = [
                self._pooled_quantile(g_cut * j / (Rl + 1)) for j in range(1, Rl + 1)
            ]
            high_grid = [
                self._pooled_quantile(g_cut + (1 - g_cut) * j / (Rh + 1))
                for j in range(1, Rh + 1)
            ]
            for low_pick in combinations(low_grid, n_cells - 1):
                low_edges = np.concatenate([[lo], low_pick, [cutoff]])
                for high_pick in combinations(high_grid, n_cells - 1):
                    high_edges = np.concatenate([[cutoff], high_pick, [hi]])
                    out.append(
                        Discretization(
                            cutoff=float(cutoff),
                            low_cells=tuple(
                                (float(a), float(b))
                                for a, b in zip(low_edges[:-1], low_edges[1:])
                            ),
                            high_cells=tuple(
                                (float(a), float(b))
                                for a, b in zip(high_edges[:-1], high_edges[1:])
                            ),
                            scheme_id=scheme_id,
                        )
                    )
                    scheme_id += 1
        return out
