"""Synthetic auction data from a fully specified data-generating process.

Randomness is counter-based: auctions are processed in fixed-size chunks and
chunk ``c`` draws from its own Philox stream keyed by ``(seed, c)`` with a
fixed within-chunk draw schedule (state, competition, one value block per
state, instrument).  Output is therefore bitwise reproducible for a given
seed no matter how chunks are distributed across workers, and a prefix of a
longer run equals a shorter run with the same seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .auctions import AuctionFormat, make_bid_strategy
from .data import CANONICAL, TOP_DEPTH, Dataset
from .errors import ConfigError
from .orderstats import ParentDistribution

__all__ = ["MixtureDGP", "simulate", "CHUNK"]

logger = logging.getLogger(__name__)

CHUNK = 4096

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class MixtureDGP:
    """Latent-state mixture over value distributions, instrument, competition.

    Exactly one competition spec is active: a fixed, analyst-known ``n``
    together with state weights ``weights`` (length K), or a support
    ``n_support`` with a joint weight matrix ``weights_kn`` of shape
    (K, len(n_support)).  ``instrument[k] = Pr(W = 0 | state k)`` and may be
    omitted only for K = 1.
    """

    value_dists: Sequence[ParentDistribution]
    format: AuctionFormat = AuctionFormat.ASCENDING
    weights: Optional[np.ndarray] = None
    n: Optional[int] = None
    weights_kn: Optional[np.ndarray] = None
    n_support: Optional[np.ndarray] = None
    instrument: Optional[np.ndarray] = None
    label: str = field(default="dgp")

    def __post_init__(self) -> None:
        if len(self.value_dists) == 0:
            raise ConfigError("need at least one value distribution")
        lo, hi = self.value_dists[0].lower, self.value_dists[0].upper
        for d in self.value_dists:
            if (d.lower, d.upper) != (lo, hi):
                raise ConfigError("all value distributions must share one support")
        known = self.weights is not None and self.n is not None
        unknown = self.weights_kn is not None and self.n_support is not None
        if known == unknown:
            raise ConfigError(
                "specify either (weights, n) for known competition or "
                "(weights_kn, n_support) for random competition"
            )
        if known:
            w = np.asarray(self.weights, dtype=float)
            object.__setattr__(self, "weights", w)
            if w.shape != (self.K,):
                raise ConfigError("weights must have one entry per state")
            if self.n < 2:
                raise ConfigError("need n >= 2 bidders")
        else:
            ns = np.asarray(self.n_support, dtype=np.int64)
            wkn = np.asarray(self.weights_kn, dtype=float)
            object.__setattr__(self, "n_support", ns)
            object.__setattr__(self, "weights_kn", wkn)
            if ns.ndim != 1 or np.any(np.diff(ns) <= 0) or ns[0] < 2:
                raise ConfigError("n_support must be strictly increasing integers >= 2")
            if wkn.shape != (self.K, len(ns)):
                raise ConfigError("weights_kn must be shaped (K, |n_support|)")
            if self.format != AuctionFormat.ASCENDING:
                raise ConfigError("random competition is only supported for ascending auctions")
            w = wkn.ravel()
        if np.any(w <= 0.0) or (len(w) > 1 and np.any(w >= 1.0)):
            raise ConfigError("weights must lie strictly inside (0, 1)")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
            raise ConfigError(f"weights sum to {w.sum()!r}, not 1")
        if self.instrument is not None:
            q = np.asarray(self.instrument, dtype=float)
            object.__setattr__(self, "instrument", q)
            if q.shape != (self.K,):
                raise ConfigError("instrument needs one Pr(W=0|k) per state")
            if np.any(q <= 0.0) or np.any(q >= 1.0):
                raise ConfigError("instrument probabilities must lie in (0, 1)")
            if self.K > 1 and np.min(np.abs(np.subtract.outer(q, q))[~np.eye(self.K, dtype=bool)]) <= 0:
                raise ConfigError("instrument probabilities must be pairwise distinct")
        elif self.K > 1:
            raise ConfigError("an instrument is required when K > 1")

    @property
    def K(self) -> int:
        return len(self.value_dists)

    @property
    def is_known_n(self) -> bool:
        return self.n is not None

    @property
    def support(self) -> tuple[float, float]:
        return (self.value_dists[0].lower, self.value_dists[0].upper)

    @property
    def state_weights(self) -> np.ndarray:
        """Marginal state weights p_k."""
        if self.is_known_n:
            return self.weights
        return self.weights_kn.sum(axis=1)

    @property
    def n_max(self) -> int:
        return int(self.n if self.is_known_n else self.n_support[-1])

    @property
    def n_min(self) -> int:
        return int(self.n if self.is_known_n else self.n_support[0])

    def competition_given_state(self) -> np.ndarray:
        """Conditional weights p_{n|k}, shape (K, |n_support|)."""
        if self.is_known_n:
            return np.ones((self.K, 1))
        return self.weights_kn / self.state_weights[:, None]

    def instrument_or_trivial(self) -> np.ndarray:
        if self.instrument is not None:
            return self.instrument
        return np.ones(self.K)


def simulate(
    dgp: MixtureDGP,
    M: int,
    seed: int,
    r: Optional[int] = None,
    depth: Optional[int] = None,
) -> Dataset:
    """Draw ``M`` auctions and record the requested consecutive pair.

    Per auction: draw ``(k, n)`` from the mixture weights, draw ``n`` i.i.d.
    values from state ``k``'s distribution, map them through the format's
    bid strategy, sort, and emit either the canonical pair of rank ``r``
    (``x_hi = X_{r:n}``) or the top-observed pair of depth ``d`` (``x_hi`` =
    d-th highest).  ``W`` is drawn from the state's instrument probability.
    Latent ``k`` (and ``n`` under random competition) are stored as fixture
    columns.
    """
    if M < 1:
        raise ConfigError(f"need M >= 1 auctions, got {M}")
    if (r is None) == (depth is None):
        raise ConfigError("exactly one of r= or depth= must be requested")
    if r is not None and not (2 <= r <= dgp.n_min):
        raise ConfigError(f"rank r={r} incompatible with smallest competition {dgp.n_min}")
    if depth is not None and not (1 <= depth <= dgp.n_min - 1):
        raise ConfigError(f"depth d={depth} incompatible with smallest competition {dgp.n_min}")

    K = dgp.K
    n_max = dgp.n_max
    supports = np.asarray(
        dgp.n_support if not dgp.is_known_n else [dgp.n], dtype=np.int64
    )
    cum_pk = np.cumsum(dgp.state_weights)
    cum_pnk = np.cumsum(dgp.competition_given_state(), axis=1)
    q0 = dgp.instrument_or_trivial()

    strategies = {}
    if dgp.format == AuctionFormat.FIRST_PRICE:
        for k in range(K):
            for n_val in supports:
                strategies[(k, int(n_val))] = make_bid_strategy(
                    dgp.format, dgp.value_dists[k], int(n_val)
                )

    x_lo = np.empty(M)
    x_hi = np.empty(M)
    w_col = np.empty(M, dtype=np.int8)
    k_col = np.empty(M, dtype=np.int64)
    n_col = np.empty(M, dtype=np.int64)

    for start in range(0, M, CHUNK):
        stop = min(start + CHUNK, M)
        c = stop - start
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, start // CHUNK))))

        # Fixed draw schedule per chunk; every state draws a full block and
        # partial chunks still draw CHUNK-sized blocks, so the stream layout
        # never depends on realized states or on the total auction count.
        u_k = rng.random(CHUNK)[:c]
        u_n = rng.random(CHUNK)[:c]
        blocks = np.stack(
            [dgp.value_dists[k].draw(rng, (CHUNK, n_max))[:c] for k in range(K)]
        )
        u_w = rng.random(CHUNK)[:c]

        k_idx = np.searchsorted(cum_pk, u_k, side="right")
        np.clip(k_idx, 0, K - 1, out=k_idx)
        n_idx = (u_n[:, None] >= cum_pnk[k_idx]).sum(axis=1)
        np.clip(n_idx, 0, len(supports) - 1, out=n_idx)
        n_val = supports[n_idx]
        values = blocks[k_idx, np.arange(c), :]

        for n_cur in supports:
            rows = np.flatnonzero(n_val == n_cur)
            if rows.size == 0:
                continue
            top = np.sort(values[rows, :n_cur], axis=1)
            if r is not None:
                lo_col, hi_col = r - 2, r - 1
            else:
                lo_col, hi_col = n_cur - depth - 1, n_cur - depth
            pair_lo = top[:, lo_col]
            pair_hi = top[:, hi_col]
            if dgp.format == AuctionFormat.FIRST_PRICE:
                for k in range(K):
                    sub = k_idx[rows] == k
                    if not sub.any():
                        continue
                    strat = strategies[(k, int(n_cur))]
                    pair_lo[sub] = strat(pair_lo[sub])
                    pair_hi[sub] = strat(pair_hi[sub])
            x_lo[start + rows] = pair_lo
            x_hi[start + rows] = pair_hi

        w_col[start:stop] = (u_w >= q0[k_idx]).astype(np.int8)
        k_col[start:stop] = k_idx
        n_col[start:stop] = n_val

    lo, hi = dgp.support
    return Dataset(
        ids=np.arange(M, dtype=np.int64),
        x_lo=x_lo,
        x_hi=x_hi,
        w=w_col,
        support=(lo, hi),
        orientation=CANONICAL if r is not None else TOP_DEPTH,
        r=r,
        depth=depth,
        n=dgp.n if dgp.is_known_n else None,
        fixture_k=k_col,
        fixture_n=None if dgp.is_known_n else n_col,
    )
