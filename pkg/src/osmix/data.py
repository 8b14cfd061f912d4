"""Observed-pair datasets, rank-convention bookkeeping, and CSV I/O.

A dataset stores, per auction, one consecutive pair of order statistics plus
a binary instrument.  Two orientations exist in the wild:

* ``canonical``: ``(x_lo, x_hi) = (X_{r-1:n}, X_{r:n})`` counted from the
  bottom (procurement convention; the two lowest bids have r = 2).
* ``top_depth``: the pair holds the (d+1)-th and d-th **highest** bids
  (regular-auction convention, e.g. d = 2 when the winning bid is missing).

All identification code runs on the canonical form.  ``canonicalize``
converts a top-depth dataset by reflecting every value through the support
midline, which turns depth-from-the-top into rank-from-the-bottom with
``r = d + 1`` regardless of the (possibly unknown) number of bidders.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import DataError

__all__ = [
    "AuctionRecord",
    "Dataset",
    "canonicalize",
    "reflect",
    "write_dataset_csv",
    "read_dataset_csv",
]

CANONICAL = "canonical"
TOP_DEPTH = "top_depth"


@dataclass(frozen=True)
class AuctionRecord:
    """One auction's observed pair; ``n``/``k`` are fixture-only truth."""

    id: int
    x_lo: float
    x_hi: float
    w: int
    n: Optional[int] = None
    k: Optional[int] = None


@dataclass(frozen=True)
class Dataset:
    """Array-backed collection of auction records.

    ``r`` is the canonical rank of ``x_hi`` (valid when orientation is
    canonical); top-depth datasets carry ``depth`` instead.  ``n`` is the
    common, analyst-known number of bidders when ``n_known``; per-record
    latent truth lives in ``fixture_n``/``fixture_k`` and never reaches
    estimators (see :meth:`estimation_view`).
    """

    ids: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    w: np.ndarray
    support: tuple[float, float]
    orientation: str = CANONICAL
    r: Optional[int] = None
    depth: Optional[int] = None
    n: Optional[int] = None
    fixture_k: Optional[np.ndarray] = None
    fixture_n: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        m = len(self.ids)
        for name in ("x_lo", "x_hi", "w"):
            if len(getattr(self, name)) != m:
                raise DataError(f"column {name} has length != {m}")
        if np.any(self.x_lo > self.x_hi + 1e-12):
            raise DataError("found records with x_lo > x_hi")
        if not np.isin(self.w, (0, 1)).all():
            raise DataError("instrument column must be binary")
        lo, hi = self.support
        if not hi > lo:
            raise DataError("support must have hi > lo")
        if self.orientation == CANONICAL:
            if self.r is None or self.r < 2:
                raise DataError("canonical dataset needs rank r >= 2")
            if self.n_known and self.n < self.r:
                raise DataError(f"known n={self.n} smaller than rank r={self.r}")
        elif self.orientation == TOP_DEPTH:
            if self.depth is None or self.depth < 1:
                raise DataError("top-depth dataset needs depth >= 1")
        else:
            raise DataError(f"unknown orientation {self.orientation!r}")

    @property
    def n_known(self) -> bool:
        return self.n is not None

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def records(self) -> Iterator[AuctionRecord]:
        ks = self.fixture_k if self.fixture_k is not None else [None] * len(self)
        if self.fixture_n is not None:
            ns = self.fixture_n
        elif self.n is not None:
            ns = np.full(len(self), self.n)
        else:
            ns = [None] * len(self)
        for i in range(len(self)):
            yield AuctionRecord(
                id=int(self.ids[i]),
                x_lo=float(self.x_lo[i]),
                x_hi=float(self.x_hi[i]),
                w=int(self.w[i]),
                n=None if ns[i] is None else int(ns[i]),
                k=None if ks[i] is None else int(ks[i]),
            )

    def estimation_view(self) -> "Dataset":
        """Copy without the latent fixture columns."""
        return replace(self, fixture_k=None, fixture_n=None)

    def subset(self, mask: np.ndarray) -> "Dataset":
        return replace(
            self,
            ids=self.ids[mask],
            x_lo=self.x_lo[mask],
            x_hi=self.x_hi[mask],
            w=self.w[mask],
            fixture_k=None if self.fixture_k is None else self.fixture_k[mask],
            fixture_n=None if self.fixture_n is None else self.fixture_n[mask],
        )

    def pooled_bids(self) -> np.ndarray:
        """Both observed order statistics pooled into one sample."""
        return np.concatenate([self.x_lo, self.x_hi])


def reflect(ds: Dataset) -> Dataset:
    """Mirror every value through the support midline (an involution).

    The shift constant ``lo + hi`` keeps the reflected support equal to the
    original one, so quantile grids stay comparable.  Reflection swaps
    min/max roles exactly: a canonical dataset of rank ``r`` becomes a
    top-depth dataset of depth ``r - 1`` and vice versa.
    """
    lo, hi = ds.support
    shift = lo + hi
    if ds.orientation == TOP_DEPTH:
        new_orientation, new_r, new_depth = CANONICAL, ds.depth + 1, None
    else:
        new_orientation, new_r, new_depth = TOP_DEPTH, None, ds.r - 1
        if new_depth < 1:
            raise DataError("cannot reflect a canonical dataset with r < 2")
    return replace(
        ds,
        x_lo=shift - ds.x_hi,
        x_hi=shift - ds.x_lo,
        orientation=new_orientation,
        r=new_r,
        depth=new_depth,
    )


def canonicalize(ds: Dataset) -> Dataset:
    """Return the dataset in canonical (ascending-rank) orientation.

    Already-canonical input is returned unchanged; top-depth input is
    reflected, giving ``r = depth + 1``.
    """
    if ds.orientation == CANONICAL:
        return ds
    return reflect(ds)


def write_dataset_csv(ds: Dataset, path: str | Path) -> None:
    """Write ``auction_id,x_lo,x_hi,w[,n][,k]``; optional columns only when present."""
    path = Path(path)
    cols = ["auction_id", "x_lo", "x_hi", "w"]
    arrays = [ds.ids, ds.x_lo, ds.x_hi, ds.w]
    fmts = ["%d", "%.17g", "%.17g", "%d"]
    if ds.fixture_n is not None:
        cols.append("n")
        arrays.append(ds.fixture_n)
        fmts.append("%d")
    elif ds.n is not None:
        cols.append("n")
        arrays.append(np.full(len(ds), ds.n))
        fmts.append("%d")
    if ds.fixture_k is not None:
        cols.append("k")
        arrays.append(ds.fixture_k)
        fmts.append("%d")
    table = np.column_stack([np.asarray(a, dtype=float) for a in arrays])
    np.savetxt(path, table, fmt=fmts, delimiter=",", header=",".join(cols), comments="")


def read_dataset_csv(
    path: str | Path,
    r: Optional[int] = None,
    depth: Optional[int] = None,
    support: Optional[tuple[float, float]] = None,
) -> Dataset:
    """Read a dataset CSV.

    The file format does not carry the rank convention, so the caller
    supplies either ``r`` (canonical) or ``depth`` (top-observed).  An ``n``
    column that is constant across records is treated as known competition;
    a varying one is kept as fixture truth only.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        raw = np.loadtxt(fh, delimiter=",", ndmin=2)
    if raw.size == 0:
        raise DataError(f"{path} contains no records")
    cols = {name: raw[:, i] for i, name in enumerate(header)}
    for required in ("auction_id", "x_lo", "x_hi", "w"):
        if required not in cols:
            raise DataError(f"{path} is missing required column {required!r}")
    if (r is None) == (depth is None):
        raise DataError("exactly one of r= or depth= must be given when reading a CSV")

    n_common: Optional[int] = None
    fixture_n = None
    if "n" in cols:
        n_col = cols["n"].astype(np.int64)
        if np.all(n_col == n_col[0]):
            n_common = int(n_col[0])
        else:
            fixture_n = n_col
    fixture_k = cols["k"].astype(np.int64) if "k" in cols else None
    x_lo = cols["x_lo"]
    x_hi = cols["x_hi"]
    if support is None:
        support = (float(np.min(x_lo)), float(np.max(x_hi)))
    return Dataset(
        ids=cols["auction_id"].astype(np.int64),
        x_lo=x_lo,
        x_hi=x_hi,
        w=cols["w"].astype(np.int8),
        support=support,
        orientation=CANONICAL if r is not None else TOP_DEPTH,
        r=r,
        depth=depth,
        n=n_common,
        fixture_k=fixture_k,
        fixture_n=fixture_n,
    )
