"""Known-competition identification engine.

Pipeline: eigendecompose the pair of cell matrices (instrument-filtered and
unfiltered) to get the low-segment mixing matrix and the instrument
conditionals; turn pointwise joint rows/columns into per-state order-
statistic density profiles; map those to scaled parent densities/CDFs; pin
the two per-state scales with density continuity at the cutoff plus unit
total mass; fit state weights to the marginal CDF of the upper order
statistic; and label states.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from itertools import permutations
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from .auctions import AuctionFormat, value_cdf_from_bid_cdf
from .data import Dataset
from .discretize import CellMatrix, Discretization
from .errors import (
    ConfigError,
    LabelingError,
    NonUniqueWeightsError,
    NumericError,
    RankDeficiencyError,
    RelevanceError,
)
from .orderstats import os_cdf
from .sources import EmpiricalSource

__all__ = [
    "SpectralOptions",
    "SpectralComponents",
    "ComponentEstimate",
    "ScaledParent",
    "eigendecompose",
    "low_density_profile",
    "high_profile",
    "recover_scaled_parent",
    "pin_scales",
    "recover_weights",
    "simplex_lstsq",
    "label_states",
    "identify_known_n",
    "as_source",
]

logger = logging.getLogger(__name__)


def as_source(data):
    """Coerce a Dataset into an empirical source; pass sources through."""
    return EmpiricalSource(data) if isinstance(data, Dataset) else data


def _cumtrapz(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Trapezoid cumulative integral from the left end, 0 at grid[0]."""
    out = np.zeros_like(values)
    np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(grid), out=out[1:])
    return out


def _cumtrapz_rev(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Trapezoid upper-tail integral down from the right end, 0 at grid[-1]."""
    out = np.zeros_like(values)
    out[:-1] = np.cumsum((0.5 * (values[1:] + values[:-1]) * np.diff(grid))[::-1])[::-1]
    return out


@dataclass(frozen=True)
class SpectralOptions:
    """Numerical knobs of the identification pipeline."""

    low_grid_points: Optional[int] = None
    high_grid_points: Optional[int] = None
    condition_cap: float = 1e10
    eigen_gap_tol: float = 1e-3
    imag_tol: float = 1e-8
    residual_tol: float = 1e-8
    labeling_rule: str = "by_instrument_prob"
    weight_grid_points: int = 101
    continuity_window_frac: Optional[float] = None

    def grid_sizes(self, population: bool) -> tuple[int, int]:
        default = 1025 if population else 257
        return (
            self.low_grid_points or default,
            self.high_grid_points or default,
        )

    def continuity_window(self, population: bool, low_width: float, high_width: float) -> float:
        """Cutoff-density read window: 0 (exact grid value) on population
        inputs, a 20% strip of the narrower segment on estimated ones."""
        frac = self.continuity_window_frac
        if frac is None:
            frac = 0.0 if population else 0.20
        return frac * min(low_width, high_width)


@dataclass
class ScaledParent:
    """Scaled parent density/CDF recovered on one segment's grid.

    On the low segment ``cumulative`` is the scaled parent CDF; on the high
    segment it is the scaled upper-tail CDF (a scaled ``1 - F``).
    """

    grid: np.ndarray
    density: np.ndarray
    cumulative: np.ndarray
    segment: str
    m: int
    boundary_flagged: int = 0
    degenerate: bool = False

    def at_cutoff(self, window: float = 0.0) -> tuple[float, float]:
        """(density at the cutoff, integral of density over the segment).

        With ``window > 0`` the density is read off the scaled CDF through
        two nested one-sided differences combined by Richardson
        extrapolation (``2 S(w) - S(2w)``), which averages away profile
        noise without the first-order bias a plain window mean would add.
        """
        if self.segment == "low":
            total = float(self.cumulative[-1])
            edge, sign = self.grid[-1], -1.0
        else:
            total = float(self.cumulative[0])
            edge, sign = self.grid[0], 1.0
        point = float(self.density[-1 if self.segment == "low" else 0])
        if window <= 0.0:
            return point, total
        s1 = (total - float(np.interp(edge + sign * window, self.grid, self.cumulative))) / window
        s2 = (total - float(np.interp(edge + sign * 2 * window, self.grid, self.cumulative))) / (
            2 * window
        )
        extrapolated = 2.0 * s1 - s2
        return (extrapolated if extrapolated > 0 else s1), total


@dataclass
class SpectralComponents:
    """Intermediate per-state objects produced by the decomposition."""

    eigenvalues: np.ndarray
    low_matrix: np.ndarray
    scheme: Discretization
    low_grid: np.ndarray
    high_grid: np.ndarray
    low_profiles: np.ndarray
    high_profiles: np.ndarray
    low_parents: list[ScaledParent] = field(default_factory=list)
    high_parents: list[ScaledParent] = field(default_factory=list)
    scales: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ComponentEstimate:
    """Recovered state-specific distributions plus weights and diagnostics."""

    x_grid: np.ndarray
    cdfs: np.ndarray
    weights: np.ndarray
    instrument_probs: np.ndarray
    scales_low: np.ndarray
    scales_high: np.ndarray
    r: int
    n: Optional[int]
    diagnostics: dict = field(default_factory=dict)
    value_grids: Optional[list[np.ndarray]] = None
    value_cdfs: Optional[list[np.ndarray]] = None

    @property
    def K(self) -> int:
        return self.cdfs.shape[0]

    def cdf_at(self, k: int, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.x_grid, self.cdfs[k])

    def state_means(self) -> np.ndarray:
        lo = self.x_grid[0]
        return np.array(
            [lo + np.trapezoid(1.0 - self.cdfs[k], self.x_grid) for k in range(self.K)]
        )

    def permuted(self, perm: np.ndarray) -> "ComponentEstimate":
        out = replace(
            self,
            cdfs=self.cdfs[perm],
            weights=self.weights[perm],
            instrument_probs=self.instrument_probs[perm],
            scales_low=self.scales_low[perm],
            scales_high=self.scales_high[perm],
        )
        if self.value_grids is not None:
            out.value_grids = [self.value_grids[i] for i in perm]
            out.value_cdfs = [self.value_cdfs[i] for i in perm]
        return out


def eigendecompose(
    J0: CellMatrix, J: CellMatrix, options: SpectralOptions = SpectralOptions()
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and column-normalized eigenvectors of ``J0 @ inv(J)``.

    Eigenvalues estimate the per-state instrument conditionals and come back
    sorted ascending; eigenvectors are scaled to unit column sums with
    negative entries clipped (their own scale is unidentified anyway).
    Complex or nearly tied eigenvalues signal instrument-relevance failure.
    """
    if J0.entries.shape != J.entries.shape:
        raise ConfigError("cell matrices must share one scheme")
    if J0.w_filter != 0:
        raise ConfigError("first matrix must be instrument-filtered (W=0)")
    dim = J.entries.shape[0]
    if dim == 1:
        if J.entries[0, 0] <= 0:
            raise RankDeficiencyError("empty joint cell probability")
        lam = np.array([J0.entries[0, 0] / J.entries[0, 0]])
        return np.clip(lam, 0.0, 1.0), np.ones((1, 1))

    cond = np.linalg.cond(J.entries)
    if not np.isfinite(cond) or cond > options.condition_cap:
        raise RankDeficiencyError(
            f"cell matrix condition number {cond:.3g} exceeds cap {options.condition_cap:.3g}"
        )
    A = J0.entries @ np.linalg.inv(J.entries)
    vals, vecs = np.linalg.eig(A)
    if np.any(np.abs(vals.imag) > options.imag_tol):
        raise RelevanceError(
            f"complex eigenvalues {vals}: instrument not relevant or sample too small"
        )
    vals = vals.real
    vecs = vecs.real
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]

    scale = max(float(np.max(np.abs(vals))), 1e-12)
    if np.min(np.diff(vals)) / scale < options.eigen_gap_tol:
        raise RelevanceError(
            f"eigenvalue gap below tolerance {options.eigen_gap_tol}: {vals}"
        )

    col_sums = vecs.sum(axis=0)
    if np.any(np.abs(col_sums) < 1e-12):
        raise RelevanceError("eigenvector with vanishing column sum")
    vecs = vecs / col_sums
    resid = float(np.max(np.abs(A @ vecs - vecs * vals[None, :])))
    if resid > options.residual_tol * max(1.0, float(np.max(np.abs(A)))):
        raise NumericError(f"eigendecomposition residual {resid:.3g} too large")

    clipped = float(-np.minimum(vecs, 0.0).sum())
    if clipped > 0:
        logger.debug("clipped %.3g of negative eigenvector mass", clipped)
    vecs = np.clip(vecs, 0.0, None)
    vecs = vecs / vecs.sum(axis=0)
    out_of_range = float(np.maximum(vals - 1.0, 0.0).max(initial=0.0) - np.minimum(vals, 0.0).min(initial=0.0))
    if out_of_range > 1e-6:
        logger.debug("eigenvalues clipped into [0,1] by %.3g", out_of_range)
    return np.clip(vals, 0.0, 1.0), vecs


def low_density_profile(
    data,
    scheme: Discretization,
    low_matrix: np.ndarray,
    grid: np.ndarray,
    w_filter: Optional[int] = None,
) -> tuple[np.ndarray, float]:
    """Per-state max-of-(r-1) density profiles on a low-segment grid.

    Each profile equals the true per-state density up to an unknown positive
    state scale.  Negative values (sampling noise) are clipped at zero; the
    clipped mass is returned as a diagnostic.
    """
    source = as_source(data)
    rows = source.low_rows(scheme, grid, w_filter)
    J = source.cell_matrix(scheme)
    profiles = rows @ np.linalg.inv(J.entries) @ low_matrix
    clipped = float(-np.minimum(profiles, 0.0).sum())
    return np.clip(profiles, 0.0, None), clipped


def high_profile(
    data,
    scheme: Discretization,
    low_matrix: np.ndarray,
    grid: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Per-state min-of-(n-r+1) density profiles on a high-segment grid.

    Columns of the joint density at fixed y are unmixed through the low
    matrix; under random competition the columns are the per-state
    competition mixtures instead, still up to state scales.
    """
    source = as_source(data)
    cols = source.high_cols(scheme, grid)
    profiles = np.linalg.solve(low_matrix, cols.T).T
    clipped = float(-np.minimum(profiles, 0.0).sum())
    return np.clip(profiles, 0.0, None), clipped


def recover_scaled_parent(
    grid: np.ndarray, profile: np.ndarray, segment: str, r: int, n: int
) -> ScaledParent:
    """Scaled parent density from an extreme-order-statistic density profile.

    Low segment (max of ``m = r-1`` draws): the scaled parent CDF is the
    cumulative integral to the power ``1/m`` and the density follows by the
    chain rule.  High segment (min of ``m = n-r+1``): same with the
    upper-tail integral.  Where the relevant integral vanishes and the chain
    rule exponent is negative, the value is filled from the nearest interior
    point (one-sided limit) and flagged.
    """
    if segment not in ("low", "high"):
        raise ValueError(f"segment must be 'low' or 'high', got {segment!r}")
    grid = np.asarray(grid, dtype=float)
    profile = np.asarray(profile, dtype=float)
    if np.any(profile < 0):
        raise ValueError("profile must be nonnegative (clip before calling)")
    m = (r - 1) if segment == "low" else (n - r + 1)
    if m < 1:
        raise ValueError(f"invalid exponent base m={m}")

    if segment == "low":
        integ = _cumtrapz(grid, profile)
    else:
        integ = _cumtrapz_rev(grid, profile)
    if integ.max() <= 0.0:
        return ScaledParent(grid, np.zeros_like(profile), np.zeros_like(profile),
                            segment, m, degenerate=True)

    cumulative = integ ** (1.0 / m)
    if m == 1:
        return ScaledParent(grid, profile.copy(), cumulative, segment, m)

    density = np.zeros_like(profile)
    ok = integ > 0
    density[ok] = (1.0 / m) * integ[ok] ** (1.0 / m - 1.0) * profile[ok]
    flagged = int(np.count_nonzero(~ok))
    if flagged:
        fill_from = np.flatnonzero(ok)
        if segment == "low":
            density[: fill_from[0]] = density[fill_from[0]]
        else:
            density[fill_from[-1] + 1 :] = density[fill_from[-1]]
    return ScaledParent(grid, density, cumulative, segment, m, boundary_flagged=flagged)


def pin_scales(
    low: ScaledParent, high: ScaledParent, cutoff: float, window: float = 0.0
) -> tuple[float, float]:
    """Per-state scales from density continuity at the cutoff + unit mass.

    Solves ``[[f_l(c), -f_h(c)], [I_l, I_h]] @ (eta_l, eta_h) = (0, 1)``
    where ``I`` are the segment integrals of the scaled densities; the
    determinant is positive whenever the recovered pieces are nontrivial.
    ``window`` smooths the cutoff density reads on noisy inputs.
    """
    f_l, I_l = low.at_cutoff(window)
    f_h, I_h = high.at_cutoff(window)
    if f_l <= 0.0 and f_h <= 0.0:
        raise NumericError("both scaled densities vanish at the cutoff")
    det = f_l * I_h + I_l * f_h
    if det <= 0.0:
        raise NumericError(
            f"scale system degenerate: det={det:.3g} "
            f"(f_l={f_l:.3g}, f_h={f_h:.3g}, I_l={I_l:.3g}, I_h={I_h:.3g})"
        )
    eta_l = f_h / det
    eta_h = f_l / det
    if eta_l <= 0.0 or eta_h <= 0.0:
        raise NumericError(f"nonpositive scales (eta_l={eta_l:.3g}, eta_h={eta_h:.3g})")
    return eta_l, eta_h


def simplex_lstsq(A: np.ndarray, b: np.ndarray, cond_cap: float = 1e12) -> np.ndarray:
    """Least squares ``min ||A p - b||`` over the probability simplex.

    Exact active-set enumeration (the column count is the number of latent
    states, at most single digits): for every candidate support solve the
    equality-constrained normal equations and keep the best feasible
    solution satisfying the KKT sign conditions.
    """
    G, K = A.shape
    if np.linalg.cond(A.T @ A) > cond_cap:
        raise NonUniqueWeightsError(
            "component CDFs are numerically collinear; weights not unique"
        )
    best = None
    best_obj = np.inf
    for mask_bits in range(1, 2**K):
        support = [i for i in range(K) if mask_bits >> i & 1]
        As = A[:, support]
        s = len(support)
        kkt = np.zeros((s + 1, s + 1))
        kkt[:s, :s] = 2.0 * As.T @ As
        kkt[:s, s] = 1.0
        kkt[s, :s] = 1.0
        rhs = np.concatenate([2.0 * As.T @ b, [1.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            continue
        p_s = sol[:s]
        if np.any(p_s < -1e-10):
            continue
        p = np.zeros(K)
        p[support] = np.clip(p_s, 0.0, None)
        obj = float(np.sum((A @ p - b) ** 2))
        if obj < best_obj - 1e-15:
            best_obj = obj
            best = p
    if best is None:
        raise NonUniqueWeightsError("no feasible simplex least-squares solution found")
    return best / best.sum()


def recover_weights(
    data,
    component_cdfs: Sequence[np.ndarray],
    x_grid: np.ndarray,
    r: int,
    n: int,
    grid_points: int = 101,
) -> np.ndarray:
    """State weights fitted to the marginal CDF of the upper order statistic.

    The mixture CDF of ``X_{r:n}`` is linear in the weights once each
    state's parent CDF is mapped through the order-statistic CDF, so a
    simplex-constrained least squares on a moderate grid recovers them.
    """
    source = as_source(data)
    lo, hi = x_grid[0], x_grid[-1]
    fit_grid = np.linspace(lo, hi, grid_points)
    b = source.upper_cdf(fit_grid)
    A = np.column_stack(
        [os_cdf(np.clip(np.interp(fit_grid, x_grid, F), 0.0, 1.0), r, n)
         for F in component_cdfs]
    )
    return simplex_lstsq(A, b)


def label_states(
    est: ComponentEstimate,
    rule: str = "by_instrument_prob",
    truth_cdfs: Optional[Sequence] = None,
    tie_tol: float = 1e-9,
) -> np.ndarray:
    """Permutation that orders states by the chosen rule's statistic.

    ``by_instrument_prob`` and ``by_mean`` sort their statistic ascending;
    ``fixture_truth`` picks the permutation minimizing the summed sup-norm
    distance to the supplied true CDFs.  Ties are an error: the labeling is
    not identified.
    """
    K = est.K
    if rule == "fixture_truth":
        if truth_cdfs is None:
            raise ConfigError("fixture_truth labeling needs the true CDFs")
        truth = np.vstack([np.asarray(t(est.x_grid), dtype=float) for t in truth_cdfs])
        best_perm, best_cost = None, np.inf
        for perm in permutations(range(K)):
            cost = sum(
                float(np.max(np.abs(est.cdfs[perm[k]] - truth[k]))) for k in range(K)
            )
            if cost < best_cost:
                best_cost, best_perm = cost, perm
        return np.array(best_perm)
    if rule == "by_instrument_prob":
        stats = est.instrument_probs
    elif rule == "by_mean":
        stats = est.state_means()
    else:
        raise ConfigError(f"unknown labeling rule {rule!r}")
    if K > 1 and np.min(np.diff(np.sort(stats))) <= tie_tol:
        raise LabelingError(f"labeling statistic tied across states: {stats}")
    return np.argsort(stats)


def identify_known_n(
    data,
    K: int,
    scheme: Optional[Discretization] = None,
    fmt: AuctionFormat = AuctionFormat.ASCENDING,
    options: SpectralOptions = SpectralOptions(),
    truth_cdfs: Optional[Sequence] = None,
) -> ComponentEstimate:
    """Full known-competition identification on a canonical source.

    ``K`` comes from rank selection (or is imposed); ``scheme`` must have
    ``K`` cells per segment and should be the rank-selection winner.  For
    first-price data the recovered bid CDFs are additionally pushed through
    the equilibrium inversion to value CDFs.
    """
    source = as_source(data)
    r, n = source.r, source.n
    if n is None:
        raise ConfigError("known-competition pipeline needs a known n")
    if K < 1:
        raise ConfigError(f"invalid state count K={K}")
    if scheme is None:
        if K > 1:
            raise ConfigError("a rank-selected scheme is required when K > 1")
        singles = source.schemes(1, 3, 0, 0)
        scheme = singles[len(singles) // 2]
    if scheme.n_cells != K:
        raise ConfigError(
            f"scheme has {scheme.n_cells} cells per segment but K={K}"
        )

    J = source.cell_matrix(scheme)
    J0 = source.cell_matrix(scheme, w_filter=0)
    eigvals, low_matrix = eigendecompose(J0, J, options)

    lo, hi = source.support
    g_low, g_high = options.grid_sizes(source.sample_size is None)
    low_grid = np.linspace(lo, scheme.cutoff, g_low)
    high_grid = np.linspace(scheme.cutoff, hi, g_high)

    low_prof, clip_low = low_density_profile(source, scheme, low_matrix, low_grid)
    high_prof, clip_high = high_profile(source, scheme, low_matrix, high_grid)

    comps = SpectralComponents(
        eigenvalues=eigvals,
        low_matrix=low_matrix,
        scheme=scheme,
        low_grid=low_grid,
        high_grid=high_grid,
        low_profiles=low_prof,
        high_profiles=high_prof,
    )
    comps.diagnostics["clipped_profile_mass"] = clip_low + clip_high

    cdfs = np.empty((K, g_low + g_high - 1))
    x_grid = np.concatenate([low_grid, high_grid[1:]])
    scales = np.empty((K, 2))
    continuity = np.empty(K)
    unit_mass = np.empty(K)
    window = options.continuity_window(
        source.sample_size is None, scheme.cutoff - lo, hi - scheme.cutoff
    )
    for k in range(K):
        low_sp = recover_scaled_parent(low_grid, low_prof[:, k], "low", r, n)
        high_sp = recover_scaled_parent(high_grid, high_prof[:, k], "high", r, n)
        comps.low_parents.append(low_sp)
        comps.high_parents.append(high_sp)
        eta_l, eta_h = pin_scales(low_sp, high_sp, scheme.cutoff, window)
        scales[k] = (eta_l, eta_h)
        f_l, I_l = low_sp.at_cutoff(window)
        f_h, I_h = high_sp.at_cutoff(window)
        continuity[k] = abs(eta_l * f_l - eta_h * f_h)
        unit_mass[k] = abs(eta_l * I_l + eta_h * I_h - 1.0)
        branch_low = eta_l * low_sp.cumulative
        branch_high = 1.0 - eta_h * high_sp.cumulative
        cdfs[k] = np.concatenate([branch_low, branch_high[1:]])
        total = cdfs[k, -1]
        if not 0.5 < total < 2.0:
            raise NumericError(f"state {k}: assembled CDF ends at {total:.3g}")
        cdfs[k] = np.clip(isotonic_regression(cdfs[k] / total).x, 0.0, 1.0)

    comps.scales = scales
    weights = recover_weights(
        source, cdfs, x_grid, r, n, grid_points=options.weight_grid_points
    )

    gap = float(np.min(np.diff(eigvals))) if K > 1 else 1.0
    est = ComponentEstimate(
        x_grid=x_grid,
        cdfs=cdfs,
        weights=weights,
        instrument_probs=eigvals.copy(),
        scales_low=scales[:, 0],
        scales_high=scales[:, 1],
        r=r,
        n=n,
        diagnostics={
            "eigenvalue_gap": gap,
            "continuity_residual": float(continuity.max()),
            "unit_mass_residual": float(unit_mass.max()),
            "clipped_profile_mass": comps.diagnostics["clipped_profile_mass"],
            "condition_J": float(np.linalg.cond(J.entries)),
            "scheme": scheme.to_json(),
        },
    )
    if fmt == AuctionFormat.FIRST_PRICE:
        est.value_grids, est.value_cdfs = [], []
        for k in range(K):
            # Structural plateaus where the assembled CDF sits at exactly
            # 0 or 1 carry no density and would (rightly) trip the
            # inversion, so trim to the strictly interior stretch.
            inside = np.flatnonzero((est.cdfs[k] > 0.0) & (est.cdfs[k] < 1.0))
            if inside.size < 3:
                raise NumericError(f"state {k}: bid CDF has no interior mass")
            s = slice(max(inside[0] - 1, 0), min(inside[-1] + 2, len(x_grid)))
            gv = value_cdf_from_bid_cdf(x_grid[s], est.cdfs[k][s], n)
            est.value_grids.append(gv.values)
            est.value_cdfs.append(gv.cdf)

    perm = label_states(est, options.labeling_rule, truth_cdfs=truth_cdfs)
    return est.permuted(perm)
