"""Rank estimation for cell matrices and selection of the latent state count.

The number of latent states equals the largest rank any cell-interval
discretization can produce, so the selector sweeps cell counts upward,
maximizes the estimated rank over a quantile-based scheme family at each
cell count, and stops as soon as the maximum stops growing.

Rank per matrix uses a singular-value threshold ``c0 * sqrt(log M / M)``
rather than a covariance-based sequential test: deterministic, free of
nuisance quantities, and consistent under the same vanishing-threshold rate.
``c0`` defaults to the value calibrated by ``scripts/calibrate_rank_c0.py``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .discretize import CellMatrix, Discretization
from .errors import ConfigError
from .sources import EmpiricalSource

__all__ = ["RankDecision", "KSelection", "estimate_rank", "estimate_K", "DEFAULT_C0"]

logger = logging.getLogger(__name__)

DEFAULT_C0 = 0.6
_POPULATION_FLOOR = 1e-10


def threshold_for(effective_size: Optional[float], c0: float = DEFAULT_C0) -> float:
    """Singular-value acceptance threshold; population matrices get a tiny floor."""
    if effective_size is None:
        return _POPULATION_FLOOR
    if effective_size <= 1:
        return np.inf
    return c0 * math.sqrt(math.log(effective_size) / effective_size)


@dataclass(frozen=True)
class RankDecision:
    """Outcome of the sequential singular-value test on one cell matrix."""

    estimated_rank: int
    singular_values: np.ndarray
    threshold: float
    scheme_id: int = -1
    sample_size: Optional[int] = None
    degenerate: bool = False
    min_cell_mass: float = 0.0


def estimate_rank(cm: CellMatrix, c0: float = DEFAULT_C0, scheme_id: int = -1) -> RankDecision:
    """Estimated rank: the first r whose (r+1)-th singular value drops below
    the threshold, or the full dimension if none does.

    Singular values are taken on the matrix renormalized by its total mass
    (the frequency table conditional on the pair landing in the scheme's
    cells) and compared against ``c0 * sqrt(log M_eff / M_eff)`` with
    ``M_eff`` the record count behind that table, so schemes with little
    mass face an appropriately harder test.
    """
    mass = float(cm.entries.sum())
    if mass <= 0.0:
        sv = np.zeros(cm.entries.shape[0])
        return RankDecision(0, sv, np.inf, scheme_id, cm.sample_size, degenerate=True)
    sv = np.linalg.svd(cm.entries / mass, compute_uv=False)
    eff = None if cm.sample_size is None else cm.sample_size * mass
    thr = threshold_for(eff, c0)
    rank = int(np.argmax(sv < thr)) if np.any(sv < thr) else len(sv)
    return RankDecision(
        estimated_rank=rank,
        singular_values=sv,
        threshold=thr,
        scheme_id=scheme_id,
        sample_size=cm.sample_size,
        min_cell_mass=float(cm.entries.min()),
    )


@dataclass
class KSelection:
    """Full record of the state-count search."""

    K_hat: int
    saturated: bool
    decisions: dict[int, list[RankDecision]] = field(default_factory=dict)
    schemes: dict[int, list[Discretization]] = field(default_factory=dict)
    winning_scheme: Optional[Discretization] = None
    winning_decision: Optional[RankDecision] = None

    def to_json(self) -> dict:
        return {
            "K_hat": self.K_hat,
            "saturated": self.saturated,
            "rounds": {
                str(kt): [
                    {
                        "scheme_id": d.scheme_id,
                        "singular_values": [float(s) for s in d.singular_values],
                        "threshold": d.threshold,
                        "estimated_rank": d.estimated_rank,
                    }
                    for d in ds
                ]
                for kt, ds in self.decisions.items()
            },
            "winning_scheme": None
            if self.winning_scheme is None
            else self.winning_scheme.to_json(),
        }


def estimate_K(
    data,
    w_filter: Optional[int] = None,
    K_max: int = 6,
    R1: int = 7,
    Rl: int = 4,
    Rh: int = 4,
    c0: float = DEFAULT_C0,
) -> KSelection:
    """Estimate the latent state count by growing the discretization size.

    For cell counts 2, 3, ... the maximum estimated rank over all enumerated
    schemes is recorded; the sweep stops once that maximum falls short of
    the cell count (rank stopped growing) and returns it.  If the maximum is
    still equal to the cell count at ``K_max`` the result carries a
    not-saturated warning.  Ties for the winning scheme break toward the
    scheme with the largest minimum cell mass, which downstream inversion
    prefers.
    """
    if K_max < 2:
        raise ConfigError("K_max must be at least 2")
    source = EmpiricalSource(data) if isinstance(data, Dataset) else data

    sel = KSelection(K_hat=0, saturated=False)
    last_max = 0
    for k_try in range(2, K_max + 1):
        schemes = source.schemes(k_try, R1, Rl, Rh)
        decisions = [
            estimate_rank(source.cell_matrix(s, w_filter), c0, scheme_id=s.scheme_id)
            for s in schemes
        ]
        sel.schemes[k_try] = schemes
        sel.decisions[k_try] = decisions
        last_max = max(d.estimated_rank for d in decisions)
        logger.info("cell count %d: max estimated rank %d over %d schemes",
                    k_try, last_max, len(schemes))
        if last_max <= k_try - 1:
            sel.K_hat = last_max
            sel.saturated = True
            break
    else:
        sel.K_hat = last_max
        sel.saturated = last_max < K_max
        if not sel.saturated:
            logger.warning(
                "rank still growing at K_max=%d; state count may exceed the cap", K_max
            )

    if sel.K_hat >= 2:
        round_decisions = sel.decisions[sel.K_hat]
        round_schemes = sel.schemes[sel.K_hat]
        # Rank ties break toward the scheme whose conditional K-th singular
        # value is largest: that margin is exactly what the downstream
        # matrix inversions depend on.
        best = max(
            range(len(round_decisions)),
            key=lambda i: (
                round_decisions[i].estimated_rank,
                float(round_decisions[i].singular_values[sel.K_hat - 1]),
            ),
        )
        sel.winning_scheme = round_schemes[best]
        sel.winning_decision = round_decisions[best]
    elif sel.K_hat == 1:
        # Single state: identification only needs one cell per segment at a
        # central cutoff.
        singles = source.schemes(1, R1, 0, 0)
        sel.winning_scheme = singles[len(singles) // 2]
        sel.winning_decision = estimate_rank(
            source.cell_matrix(sel.winning_scheme, w_filter), c0,
            scheme_id=sel.winning_scheme.scheme_id,
        )
    return sel
