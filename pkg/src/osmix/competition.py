"""Ascending-auction identification with an unknown number of bidders.

The bid distribution does not depend on competition in ascending auctions,
so the whole effect of the unknown bidder count collapses into the upper
order statistic's mixture.  Three pieces:

* ``solve_eta_pn``: with a single latent state, the marginal CDF of the
  upper order statistic restricted to the low segment is linear in the
  competition weights and polynomial in the unknown CDF scale; solving the
  linear system on a small level grid and root-finding the scale on the
  simplex constraint identifies both.
* ``solve_scales_weights_kn``: with latent states on top, the same
  restriction is fit jointly over all per-state scales and the joint
  (state, competition) weights by multistart projected least squares, with
  cross-start agreement standing in for the uniqueness assumption.
* ``invert_tail_mixture``: on the high segment the per-state competition
  mixture's upper-tail integral is strictly decreasing in the parent CDF,
  so a bisection recovers the CDF pointwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, isotonic_regression, minimize
from scipy.special import gammaln

from .errors import (
    AmbiguityError,
    ConfigError,
    IdentificationError,
    MisfitError,
    NumericError,
    UniquenessError,
)
from .orderstats import binom_constant, os_cdf
from .rank import KSelection, estimate_K
from .sources import EmpiricalSource
from .spectral import (
    ComponentEstimate,
    SpectralOptions,
    as_source,
    _cumtrapz_rev,
    eigendecompose,
    label_states,
    low_density_profile,
    high_profile,
    recover_scaled_parent,
)

__all__ = [
    "CompetitionMixture",
    "CompetitionOptions",
    "EtaPnResult",
    "KnSolution",
    "solve_eta_pn",
    "invert_tail_mixture",
    "tail_mixture_value",
    "solve_scales_weights_kn",
    "identify_unknown_n",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompetitionMixture:
    """Recovered distribution over (state, bidder count)."""

    support: np.ndarray
    weights_kn: np.ndarray
    scales: np.ndarray

    @property
    def state_weights(self) -> np.ndarray:
        return self.weights_kn.sum(axis=1)

    def competition_given_state(self) -> np.ndarray:
        return self.weights_kn / self.state_weights[:, None]


@dataclass(frozen=True)
class CompetitionOptions:
    """Knobs of the unknown-competition solvers."""

    n_starts: int = 20
    seed: int = 0
    fit_grid_points: int = 101
    residual_tol: Optional[float] = None
    agreement_tol: float = 1e-4
    eta_scan_points: int = 512
    root_tol: float = 1e-12
    # Single-state runs push the cutoff high: the scale/weight system's
    # information content collapses when the low segment is short.
    single_cutoff_quantile: float = 0.9
    stitch_levels: int = 6

    def tolerance(self, sample_size: Optional[int], grid_points: int) -> float:
        """Default misfit tolerance (sum of squares over the grid).

        Population inputs allow a 1e-5 pointwise residual (grid
        discretization of otherwise exact curves); sampled inputs scale
        with the CDF estimation noise.  Spurious roots/optima misfit at the
        1e-2 level, orders of magnitude above either.
        """
        if self.residual_tol is not None:
            return self.residual_tol
        if sample_size is None:
            return grid_points * 1e-10
        noise = 2.0 * math.sqrt(math.log(sample_size) / sample_size)
        return grid_points * noise**2


def _tail_coeff(r: int, n: int) -> float:
    """Coefficient ``n! / ((r-2)! (n-r+1)!)`` of the tail polynomial."""
    return math.exp(gammaln(n + 1) - gammaln(r - 1) - gammaln(n - r + 2))


def tail_mixture_value(F, weights: np.ndarray, r: int, support: Sequence[int]):
    """Upper-tail mixture polynomial ``sum_n p_n c'_n (1-F)^(n-r+1)``."""
    F_arr = np.asarray(F, dtype=float)
    out = np.zeros_like(F_arr)
    for p_n, n in zip(weights, support):
        out += p_n * _tail_coeff(r, n) * (1.0 - F_arr) ** (n - r + 1)
    return float(out) if np.isscalar(F) else out


def invert_tail_mixture(
    T, weights: np.ndarray, r: int, support: Sequence[int], tol: float = 1e-10
):
    """Parent CDF solving the strictly decreasing tail polynomial equation.

    ``T`` may be scalar or an array; values are clamped into the attainable
    range when within 0.5% of it and rejected otherwise.
    """
    if r < 2:
        raise ConfigError("tail inversion needs rank r >= 2")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(support),) or np.any(weights < 0):
        raise ConfigError("invalid competition weights")
    top = float(tail_mixture_value(0.0, weights, r, support))
    T_arr = np.atleast_1d(np.asarray(T, dtype=float))
    slack = 5e-3 * max(top, 1.0)
    if np.any(T_arr < -slack) or np.any(T_arr > top + slack):
        raise NumericError(
            f"tail integral outside attainable range [0, {top:.6g}]: "
            "upstream scales are inconsistent"
        )
    T_clamped = np.clip(T_arr, 0.0, top)

    lo = np.zeros_like(T_clamped)
    hi = np.ones_like(T_clamped)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        val = tail_mixture_value(mid, weights, r, support)
        too_high = val > T_clamped
        lo = np.where(too_high, mid, lo)
        hi = np.where(too_high, hi, mid)
        if np.max(hi - lo) < tol:
            break
    out = 0.5 * (lo + hi)
    return float(out[0]) if np.isscalar(T) else out.reshape(np.shape(T))


@dataclass
class EtaPnResult:
    eta: float
    p_n: np.ndarray
    residual: float
    n_roots_considered: int


def solve_eta_pn(
    low_grid: np.ndarray,
    F_r_values: np.ndarray,
    F_check_values: np.ndarray,
    r: int,
    support: Sequence[int],
    sample_size: Optional[int] = None,
    alpha_levels: Optional[np.ndarray] = None,
    options: CompetitionOptions = CompetitionOptions(),
) -> EtaPnResult:
    """Joint CDF scale and competition weights for a single latent state.

    For each candidate scale the restriction is linear in the weights, so
    they are solved by least squares over the whole low grid (a minimal
    point-per-competition-value system is exactly determined but violently
    ill-conditioned near the lower boundary); the scale is then a root of
    the simplex-sum constraint.  Every root is validated against the full
    low-segment restriction: the fit must hold at every grid point, and
    several surviving roots are an ambiguity error, not a choice.
    """
    low_grid = np.asarray(low_grid, dtype=float)
    F_r = np.asarray(F_r_values, dtype=float)
    F_check = np.asarray(F_check_values, dtype=float)
    if np.any(np.diff(F_check) < -1e-10):
        raise ConfigError("scaled parent CDF must be nondecreasing on the low grid")
    F_max = float(F_check[-1])
    if F_max <= 0:
        raise ConfigError("scaled parent CDF is identically zero")

    if alpha_levels is not None:
        alphas = np.asarray(alpha_levels, dtype=float) * F_max
        if np.any(alphas < F_check[0]) or np.any(alphas > F_max):
            raise ConfigError("level grid not attained by the scaled CDF")
        x_at = np.interp(alphas, F_check, low_grid)
        fit_F_check = alphas
        fit_b = np.interp(x_at, low_grid, F_r)
    else:
        fit_F_check = F_check
        fit_b = F_r

    def weights_at(eta: float) -> Optional[np.ndarray]:
        A = np.column_stack(
            [os_cdf(np.clip(eta * fit_F_check, 0, 1), r, n) for n in support]
        )
        try:
            return np.linalg.lstsq(A, fit_b, rcond=None)[0]
        except np.linalg.LinAlgError:
            return None

    def gap(eta: float) -> float:
        p = weights_at(eta)
        return np.nan if p is None else float(p.sum()) - 1.0

    eta_hi = 1.0 / F_max
    etas = np.linspace(eta_hi * 1e-3, eta_hi, options.eta_scan_points)
    gaps = np.array([gap(e) for e in etas])

    tol = options.tolerance(sample_size, low_grid.size)
    point_tol = math.sqrt(tol / low_grid.size)
    model_full = lambda eta, p: sum(
        p_i * os_cdf(np.clip(eta * F_check, 0, 1), r, n) for p_i, n in zip(p, support)
    )

    roots: list[tuple[float, np.ndarray, float]] = []
    for i in range(len(etas) - 1):
        g0, g1 = gaps[i], gaps[i + 1]
        if not (np.isfinite(g0) and np.isfinite(g1)) or g0 * g1 > 0:
            continue
        eta_star = brentq(gap, etas[i], etas[i + 1], xtol=options.root_tol)
        p_star = weights_at(eta_star)
        if p_star is None or np.any(p_star < -10 * point_tol):
            continue
        resid = float(np.max(np.abs(F_r - model_full(eta_star, p_star))))
        if resid <= max(point_tol, 1e-9):
            if not any(abs(eta_star - e) < 1e-6 * eta_hi for e, _, _ in roots):
                roots.append((eta_star, p_star, resid))

    if not roots:
        raise IdentificationError(
            "no scale passes the full-grid validation: "
            "competition support may be wrong or data too noisy"
        )
    if len(roots) > 1:
        raise AmbiguityError(
            f"{len(roots)} distinct scales pass validation: "
            f"{[round(e, 6) for e, _, _ in roots]}"
        )
    eta, p, resid = roots[0]
    p = np.clip(p, 0.0, None)
    return EtaPnResult(eta=eta, p_n=p / p.sum(), residual=resid, n_roots_considered=len(roots))


def stitched_scaled_cdf(
    x_lo: np.ndarray,
    x_hi: np.ndarray,
    low_grid: np.ndarray,
    r: int,
    n_levels: int = 6,
) -> np.ndarray:
    """Counting estimator of (a scaled power of) the parent CDF on the low grid.

    For any threshold c, ``#{x_lo <= x, x_hi > c}/M`` is proportional to
    ``F(x)^(r-1)`` on ``x <= c`` because the pair's joint density separates.
    A single threshold at the top of the segment would waste most records,
    so the estimate is chained across several thresholds: each stretch uses
    the counting curve of the lowest threshold above it, ratio-linked at the
    stitch points.  The (1/(r-1))-th root then gives the scaled parent CDF.
    """
    M = x_lo.size
    cutoff = low_grid[-1]
    lo = low_grid[0]
    levels = lo + np.linspace(0.35, 1.0, n_levels) * (cutoff - lo)
    curves = [np.sort(x_lo[x_hi > c]) for c in levels]

    def count(j: int, x) -> np.ndarray:
        return np.searchsorted(curves[j], x, side="right") / M

    # Multiplier linking each threshold's curve to the first one's scale.
    link = np.ones(n_levels)
    for j in range(1, n_levels):
        anchor_own = count(j, levels[j - 1])
        anchor_prev = count(j - 1, levels[j - 1]) * link[j - 1]
        if anchor_own <= 0:
            raise EstimationError("stitch anchor has no mass at an inner threshold")
        link[j] = anchor_prev / anchor_own

    out = np.zeros_like(low_grid)
    prev_level = lo
    for j, c in enumerate(levels):
        seg = (low_grid > prev_level) & (low_grid <= c) if j else (low_grid <= c)
        out[seg] = count(j, low_grid[seg]) * link[j]
        prev_level = c
    out = np.maximum.accumulate(np.clip(out, 0.0, None))
    return out ** (1.0 / (r - 1)) if r > 2 else out


def em_competition_weights(
    x_lo: np.ndarray,
    x_hi: np.ndarray,
    support: Sequence[int],
    p0: np.ndarray,
    n_iter: int = 60,
    tol: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Competition weights by EM on the full joint likelihood (rank 2 pairs).

    When the two lowest of ``n`` draws are observed, the ``n - 2`` missing
    draws are exactly right-censored at the upper observation.  The
    complete-data MLE of the parent CDF is therefore a weighted
    Kaplan-Meier (every observed value is a death, every upper observation
    also carries ``E[n|record] - 2`` censorings), and the weights update is
    a plain posterior mean, so EM alternates two closed forms.  Returns
    ``(p_n, grid, parent_cdf)``.
    """
    M = x_lo.size
    ns = np.asarray(support, dtype=float)
    # All coordinates are deaths; censored mass sits at the y values only.
    deaths = np.concatenate([x_lo, x_hi])
    order = np.argsort(deaths)
    deaths_sorted = deaths[order]
    y_rank_in_deaths = np.searchsorted(deaths_sorted, x_hi, side="left")

    p = np.asarray(p0, dtype=float).copy()
    S_at_y = np.clip(1.0 - np.searchsorted(deaths_sorted, x_hi, side="right") / (2 * M), 1e-12, 1.0)
    prev = p.copy()
    grid_S = None
    for _ in range(n_iter):
        logw = np.log(np.maximum(S_at_y, 1e-300))[:, None] * (ns[None, :] - 2.0)
        logw += np.log(p * ns * (ns - 1.0))[None, :]
        logw -= logw.max(axis=1, keepdims=True)
        gamma = np.exp(logw)
        gamma /= gamma.sum(axis=1, keepdims=True)
        p = gamma.mean(axis=0)
        w = gamma @ (ns - 2.0)

        # Weighted Kaplan-Meier: risk at the i-th smallest death is the
        # count of later deaths plus censored weight at later y's.
        cens_at_death = np.zeros(2 * M)
        np.add.at(cens_at_death, y_rank_in_deaths, w)
        risk = (
            (2 * M - np.arange(2 * M))
            + (w.sum() - np.concatenate([[0.0], np.cumsum(cens_at_death)[:-1]]))
        )
        log_surv = np.cumsum(np.log1p(-1.0 / np.maximum(risk, 1.0)))
        grid_S = np.exp(log_surv)
        idx = np.searchsorted(deaths_sorted, x_hi, side="right") - 1
        S_at_y = np.clip(np.where(idx >= 0, grid_S[np.clip(idx, 0, None)], 1.0), 1e-12, 1.0)

        if np.max(np.abs(p - prev)) < tol:
            break
        prev = p.copy()
    return p, deaths_sorted, 1.0 - grid_S


def refine_eta_pn_mle(
    x_hi: np.ndarray,
    total_records: int,
    low_grid: np.ndarray,
    F_check: np.ndarray,
    r: int,
    support: Sequence[int],
    eta0: float,
    p0: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Conditional-likelihood polish of the single-state (scale, weights) fit.

    Records whose upper order statistic lands below the cutoff have pair
    density proportional to ``eta^r * sum_n p_n c_n (1 - eta Fcheck(y))^(n-r)``
    after all parameter-free density factors cancel, and the remaining
    records contribute the complementary truncation mass.  Maximizing this
    needs only CDF-level inputs yet is far more efficient than fitting the
    marginal CDF shape, which is what the stated Monte Carlo tolerances
    require.
    """
    cutoff = low_grid[-1]
    inside = x_hi[x_hi <= cutoff]
    M_in, M = inside.size, total_records
    if M_in == 0 or M_in == M:
        return eta0, p0
    F_y = np.interp(inside, low_grid, F_check)
    F_cut = float(F_check[-1])
    coeff = np.array(
        [binom_constant(r, n) * (n - r + 1) for n in support], dtype=float
    )
    powers = np.array([n - r for n in support], dtype=float)

    n_comp = len(support)

    def unpack(theta: np.ndarray) -> tuple[float, np.ndarray]:
        eta = F_cut ** (-1) / (1.0 + math.exp(-theta[0]))
        z = np.concatenate([[0.0], theta[1:]])
        ez = np.exp(z - z.max())
        return eta, ez / ez.sum()

    def negloglik(theta: np.ndarray) -> float:
        eta, p = unpack(theta)
        tail = np.maximum(1.0 - eta * F_y, 1e-300)
        inside_term = np.log(tail[:, None] ** powers[None, :] @ (p * coeff))
        mix_out = 1.0 - sum(
            p_i * os_cdf(np.clip(eta * F_cut, 0, 1), r, n) for p_i, n in zip(p, support)
        )
        if mix_out <= 0:
            return np.inf
        return -(
            M_in * r * math.log(eta)
            + float(inside_term.sum())
            + (M - M_in) * math.log(mix_out)
        ) / M

    u0 = math.log(eta0 * F_cut / max(1.0 - eta0 * F_cut, 1e-12))
    z_full = np.log(np.clip(p0, 1e-4, 1.0))
    starts = [np.concatenate([[u0], z_full[1:] - z_full[0]])]
    starts.append(np.concatenate([[u0], np.zeros(n_comp - 1)]))
    starts.append(np.concatenate([[u0 + 0.5], np.zeros(n_comp - 1)]))
    best = None
    for theta0 in starts:
        res = minimize(negloglik, theta0, method="L-BFGS-B",
                       options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        return eta0, p0
    eta, p = unpack(best.x)
    return float(eta), p


@dataclass
class KnSolution:
    eta: np.ndarray
    weights_kn: np.ndarray
    residual: float
    n_converged: int
    start_values: list = field(default_factory=list)


def _kn_objective_factory(
    F_r: np.ndarray, F_checks: np.ndarray, r: int, support: Sequence[int]
):
    """Objective/gradient over (log-scales, weight logits); exact simplex."""
    G, K = F_checks.shape
    n_comp = len(support)
    betaln_const = [
        math.lgamma(r) + math.lgamma(n - r + 1) - math.lgamma(n + 1) for n in support
    ]
    PEN = 1e4

    def fun_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        u = theta[:K]
        z = theta[K:].reshape(K, n_comp)
        eta = np.exp(u)
        zmax = z.max()
        ez = np.exp(z - zmax)
        p = ez / ez.sum()

        args = eta[None, :] * F_checks
        excess = np.maximum(args - 1.0, 0.0)
        clipped = np.minimum(args, 1.0)
        B = np.empty((G, K, n_comp))
        dB = np.empty((G, K, n_comp))
        for j, n in enumerate(support):
            B[:, :, j] = os_cdf(clipped, r, n)
            with np.errstate(divide="ignore", invalid="ignore"):
                logpdf = (
                    (r - 1) * np.log(np.maximum(clipped, 1e-300))
                    + (n - r) * np.log(np.maximum(1.0 - clipped, 1e-300))
                    - betaln_const[j]
                )
            dB[:, :, j] = np.where(args < 1.0, np.exp(logpdf), 0.0)
        model = np.einsum("gkj,kj->g", B, p)
        resid = model - F_r
        value = float(resid @ resid) + PEN * float((excess**2).sum())

        grad_p = 2.0 * np.einsum("g,gkj->kj", resid, B)
        grad_z = p * (grad_p - float((p * grad_p).sum()))
        grad_eta = 2.0 * np.einsum("g,gkj,kj,gk->k", resid, dB, p, F_checks)
        grad_eta += 2.0 * PEN * (excess * F_checks).sum(axis=0)
        grad_u = grad_eta * eta
        return value, np.concatenate([grad_u, grad_z.ravel()])

    return fun_grad


def solve_scales_weights_kn(
    low_grid: np.ndarray,
    F_r_values: np.ndarray,
    F_check_matrix: np.ndarray,
    r: int,
    support: Sequence[int],
    sample_size: Optional[int] = None,
    options: CompetitionOptions = CompetitionOptions(),
) -> KnSolution:
    """Per-state CDF scales and joint (state, competition) weights.

    Minimizes the squared deviation between the observed upper-order-
    statistic CDF and its mixture restriction on the low segment, over
    log-scales and softmax weights, from ``n_starts`` deterministic starts.
    Divergent multistart optima (beyond the agreement tolerance among
    near-optimal starts) are reported as a uniqueness failure rather than
    silently resolved.
    """
    F_r = np.asarray(F_r_values, dtype=float)
    F_checks = np.asarray(F_check_matrix, dtype=float)
    if F_checks.ndim != 2:
        raise ConfigError("F_check_matrix must be (grid, K)")
    G, K = F_checks.shape
    n_comp = len(support)
    if K * n_comp < 2:
        raise ConfigError("need at least two unknowns")
    F_max = F_checks.max(axis=0)
    if np.any(F_max <= 0):
        raise ConfigError("a scaled parent CDF is identically zero")

    fun_grad = _kn_objective_factory(F_r, F_checks, r, support)
    tol = options.tolerance(sample_size, G)

    results = []
    for s in range(options.n_starts):
        rng = np.random.default_rng(np.random.SeedSequence((options.seed, s)))
        if s == 0:
            eta0 = 0.8 / F_max
            z0 = np.zeros(K * n_comp)
        else:
            eta0 = rng.uniform(0.3, 0.98, size=K) / F_max
            z0 = rng.normal(0.0, 0.5, size=K * n_comp)
        theta0 = np.concatenate([np.log(eta0), z0])
        res = minimize(
            fun_grad,
            theta0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 1000, "ftol": 1e-16, "gtol": 1e-12},
        )
        if not np.isfinite(res.fun):
            continue
        u = res.x[:K]
        z = res.x[K:].reshape(K, n_comp)
        eta = np.exp(u)
        ez = np.exp(z - z.max())
        p = ez / ez.sum()
        results.append((float(res.fun), eta, p, bool(res.success)))

    if not results:
        raise MisfitError("no multistart converged")
    results.sort(key=lambda t: t[0])
    best_fun, best_eta, best_p, _ = results[0]
    if best_fun > tol:
        raise MisfitError(
            f"best residual {best_fun:.3g} above tolerance {tol:.3g}: "
            "model restriction does not fit"
        )
    near = [t for t in results if t[3] and t[0] <= 2.0 * tol]
    for fun_s, eta_s, p_s, _ in near:
        dev = max(
            float(np.max(np.abs(eta_s - best_eta))), float(np.max(np.abs(p_s - best_p)))
        )
        if dev > options.agreement_tol:
            raise UniquenessError(
                f"near-optimal starts disagree by {dev:.3g} "
                f"(residuals {fun_s:.3g} vs {best_fun:.3g}): "
                "uniqueness assumption fails empirically"
            )
    return KnSolution(
        eta=best_eta,
        weights_kn=best_p,
        residual=best_fun,
        n_converged=len(near),
        start_values=[t[0] for t in results],
    )


def identify_unknown_n(
    data,
    support: Sequence[int],
    K: Optional[int] = None,
    selection: Optional[KSelection] = None,
    options: SpectralOptions = SpectralOptions(),
    comp_options: CompetitionOptions = CompetitionOptions(),
    truth_cdfs: Optional[Sequence] = None,
) -> tuple[ComponentEstimate, CompetitionMixture]:
    """Ascending-auction identification with latent state and competition.

    Pipeline: rank-select the state count (columns on the high side are the
    per-state competition mixtures); eigendecompose as in the known-n case;
    recover the scaled per-state parent CDFs on the low segment; solve the
    scale/weight system; rescale the high-side mixtures with the now-known
    scales and invert their tail integrals pointwise; assemble, weight, and
    label.
    """
    source = as_source(data)
    r = source.r
    support = [int(n) for n in support]
    if r < 2 or r > min(support):
        raise ConfigError(f"rank r={r} incompatible with competition support {support}")

    if selection is None and K is None:
        selection = estimate_K(source)
    if selection is not None and K is None:
        K = selection.K_hat
    if K < 1:
        raise IdentificationError("selected state count is degenerate")
    scheme = selection.winning_scheme if selection is not None else None
    if scheme is None or scheme.n_cells != K:
        if K == 1:
            q = comp_options.single_cutoff_quantile
            n_q = max(int(round(1.0 / (1.0 - q))) - 1, 1)
            singles = source.schemes(1, n_q, 0, 0)
            scheme = singles[-1]
        else:
            raise ConfigError("a rank-selected scheme matching K is required")

    J = source.cell_matrix(scheme)
    J0 = source.cell_matrix(scheme, w_filter=0)
    if K > 1 and not source.has_instrument:
        raise ConfigError("an instrument is required when K > 1")
    eigvals, low_matrix = eigendecompose(J0, J, options)

    lo, hi = source.support
    g_low, g_high = options.grid_sizes(source.sample_size is None)
    low_grid = np.linspace(lo, scheme.cutoff, g_low)
    high_grid = np.linspace(scheme.cutoff, hi, g_high)

    low_prof, _ = low_density_profile(source, scheme, low_matrix, low_grid)
    high_prof, _ = high_profile(source, scheme, low_matrix, high_grid)

    if K == 1 and isinstance(source, EmpiricalSource):
        # Counting-based scaled CDF: far less noise than integrating a
        # kernel profile, which the scale/weight fit is very sensitive to.
        F_checks = stitched_scaled_cdf(
            source.dataset.x_lo, source.dataset.x_hi, low_grid, r,
            n_levels=comp_options.stitch_levels,
        )[:, None]
    else:
        low_parents = [
            recover_scaled_parent(low_grid, low_prof[:, k], "low", r, max(support))
            for k in range(K)
        ]
        F_checks = np.column_stack([sp.cumulative for sp in low_parents])
    F_r_low = source.upper_cdf(low_grid)

    if K == 1:
        empirical = isinstance(source, EmpiricalSource)
        try:
            single = solve_eta_pn(
                low_grid, F_r_low, F_checks[:, 0], r, support,
                sample_size=source.sample_size, options=comp_options,
            )
            eta_1, p_1, residual = single.eta, single.p_n, single.residual
        except (IdentificationError, AmbiguityError):
            if not empirical:
                raise
            # Sampling noise can defeat the root scan; the likelihood
            # refinement below only needs a rough starting point.
            logger.info("scale root scan inconclusive; starting refinement from center")
            eta_1 = 0.8 / float(F_checks[-1, 0])
            p_1 = np.full(len(support), 1.0 / len(support))
            residual = float("nan")
        if empirical and len(support) > 1:
            eta_1, p_1 = refine_eta_pn_mle(
                source.dataset.x_hi, len(source.dataset), low_grid,
                F_checks[:, 0], r, support, eta_1, p_1,
            )
        eta = np.array([eta_1])
        weights_kn = p_1[None, :]
        residual = residual
    else:
        sol = solve_scales_weights_kn(
            low_grid, F_r_low, F_checks, r, support,
            sample_size=source.sample_size, options=comp_options,
        )
        eta, weights_kn, residual = sol.eta, sol.weights_kn, sol.residual

    p_k = weights_kn.sum(axis=1)
    p_n_given_k = weights_kn / p_k[:, None]

    # High side: unscale the recovered competition mixtures, then invert
    # their tail integrals pointwise.  The (r-1) factor moves the plain
    # tail integral into the tail polynomial's coefficient convention.
    lam = eta ** (r - 1)
    cdfs = np.empty((K, g_low + g_high - 1))
    x_grid = np.concatenate([low_grid, high_grid[1:]])
    continuity = np.empty(K)
    for k in range(K):
        tail_plain = _cumtrapz_rev(high_grid, high_prof[:, k]) / lam[k]
        T = (r - 1) * tail_plain / p_k[k]
        F_high = invert_tail_mixture(T, p_n_given_k[k], r, support)
        branch_low = np.clip(eta[k] * F_checks[:, k], 0.0, 1.0)
        continuity[k] = abs(branch_low[-1] - F_high[0])
        cdfs[k] = np.clip(
            isotonic_regression(np.concatenate([branch_low, F_high[1:]])).x, 0.0, 1.0
        )

    est = ComponentEstimate(
        x_grid=x_grid,
        cdfs=cdfs,
        weights=p_k,
        instrument_probs=eigvals.copy(),
        scales_low=eta,
        scales_high=lam,
        r=r,
        n=None,
        diagnostics={
            "fit_residual": residual,
            "continuity_residual": float(continuity.max()),
            "eigenvalue_gap": float(np.min(np.diff(eigvals))) if K > 1 else 1.0,
            "condition_J": float(np.linalg.cond(J.entries)),
            "scheme": scheme.to_json(),
        },
    )
    perm = label_states(est, options.labeling_rule, truth_cdfs=truth_cdfs)
    est = est.permuted(perm)
    mixture = CompetitionMixture(
        support=np.asarray(support, dtype=np.int64),
        weights_kn=weights_kn[perm],
        scales=eta[perm],
    )
    return est, mixture
