"""Co-occurrence sufficient statistics and the relatedness estimate.

Counting conventions
--------------------
``both-roles`` (default)
    Every consumed pair ``(i, j)`` is recorded in both orientations, so the
    count matrix is symmetric, ``n`` is the total oriented mass (twice the
    number of consumed pairs), and ``N_i`` is the number of pair slots item
    ``i`` takes part in. ``sum(N_ij) == sum(N_i) == n``.
``center-only``
    Pairs are kept directed. ``n`` is the number of pairs, ``N_i`` counts
    ``i`` as a center, and the context marginal is kept separately.

In both cases relatedness is ``log(n N_ij / (N_i M_j))`` with ``M`` the
context marginal (``M == N`` for ``both-roles``), which is zero in
expectation for independent items and is the exact unconstrained SGNS
optimum (up to ``-log k``) when negatives follow the context marginal.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .catalog import PairStream

CONVENTIONS = ("both-roles", "center-only")


@dataclass
class CooccurrenceTable:
    pair_counts: sp.csr_matrix
    convention: str = "both-roles"

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")
        m = sp.csr_matrix(self.pair_counts, dtype=np.int64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValueError("pair count matrix must be square")
        if m.nnz and m.data.min() < 0:
            raise ValueError("negative pair count")
        self.pair_counts = m
        self.item_counts = np.asarray(m.sum(axis=1)).ravel().astype(np.int64)
        self.context_counts = np.asarray(m.sum(axis=0)).ravel().astype(np.int64)
        self.n = int(m.sum())

    @property
    def num_items(self) -> int:
        return self.pair_counts.shape[0]

    @property
    def symmetric(self) -> bool:
        return (self.pair_counts != self.pair_counts.T).nnz == 0

    def count(self, i: int, j: int) -> int:
        return int(self.pair_counts[i, j])

    def coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c = self.pair_counts.tocoo()
        order = np.lexsort((c.col, c.row))
        return c.row[order].astype(np.int64), c.col[order].astype(np.int64), c.data[order]

    def equals(self, other: "CooccurrenceTable") -> bool:
        return (
            self.convention == other.convention
            and self.pair_counts.shape == other.pair_counts.shape
            and (self.pair_counts != other.pair_counts).nnz == 0
        )

    @classmethod
    def empty(cls, num_items: int, convention: str = "both-roles") -> "CooccurrenceTable":
        return cls(sp.csr_matrix((num_items, num_items), dtype=np.int64), convention)


def accumulate(stream: PairStream, num_items: int, role_convention: str = "both-roles") -> CooccurrenceTable:
    """Count a pair stream into a table."""
    c, x = stream.centers, stream.contexts
    if len(c) and (min(c.min(), x.min()) < 0 or max(c.max(), x.max()) >= num_items):
        raise IndexError("pair index outside the vocabulary")
    if role_convention == "both-roles":
        c, x = np.concatenate([c, x]), np.concatenate([x, c])
    elif role_convention != "center-only":
        raise ValueError(f"unknown convention {role_convention!r}")
    counts = sp.coo_matrix((np.ones(len(c), dtype=np.int64), (c, x)), shape=(num_items, num_items))
    return CooccurrenceTable(counts.tocsr(), role_convention)


def merge(a: CooccurrenceTable, b: CooccurrenceTable) -> CooccurrenceTable:
    if a.convention != b.convention:
        raise ValueError("cannot merge tables with different conventions")
    if a.num_items != b.num_items:
        raise ValueError("cannot merge tables over different vocabularies")
    return CooccurrenceTable(a.pair_counts + b.pair_counts, a.convention)


def thread_cap() -> int:
    return max(1, int(os.environ.get("RELANA_THREADS", "1")))


def accumulate_sharded(
    stream: PairStream,
    num_items: int,
    role_convention: str = "both-roles",
    num_shards: int = 4,
    threads: int | None = None,
) -> CooccurrenceTable:
    """Shard-parallel counting; shards merge in index order, so the result is
    identical for any thread count."""
    threads = thread_cap() if threads is None else threads
    shards = stream.shard(num_shards)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        tables = list(pool.map(lambda s: accumulate(s, num_items, role_convention), shards))
    out = CooccurrenceTable.empty(num_items, role_convention)
    for t in tables:
        out = merge(out, t)
    return out


def minus_log_k(k: float) -> float:
    """Shift that turns relatedness into the SGNS fixed point with ``k`` negatives."""
    return -float(np.log(k))


@dataclass
class RelatednessEstimate:
    """Relatedness values on observed pairs; unobserved pairs are missing."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    num_items: int
    shift: float = 0.0
    clip_negative: bool = False

    def __len__(self) -> int:
        return len(self.values)

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        out = np.full((self.num_items, self.num_items), fill, dtype=float)
        out[self.rows, self.cols] = self.values
        return out

    def observed_mask(self) -> np.ndarray:
        mask = np.zeros((self.num_items, self.num_items), dtype=bool)
        mask[self.rows, self.cols] = True
        return mask

    def missing_mask(self) -> np.ndarray:
        return ~self.observed_mask()

    def get(self, i: int, j: int) -> float | None:
        hit = np.flatnonzero((self.rows == i) & (self.cols == j))
        return float(self.values[hit[0]]) if len(hit) else None

    def row(self, i: int) -> np.ndarray:
        """Dense relatedness row with missing entries as 0."""
        out = np.zeros(self.num_items)
        sel = self.rows == i
        out[self.cols[sel]] = self.values[sel]
        return out


def relatedness(
    table: CooccurrenceTable, shift: float = 0.0, clip_negative: bool = False
) -> RelatednessEstimate:
    """``R_ij = log(n N_ij / (N_i M_j)) + shift`` on every observed pair.

    With ``clip_negative`` the negative values are stored as 0; pairs that
    never co-occur stay missing either way.
    """
    if table.n <= 0:
        raise ValueError("relatedness of an empty table")
    rows, cols, counts = table.coo()
    ni = table.item_counts[rows].astype(float)
    mj = table.context_counts[cols].astype(float)
    if np.any(ni == 0) or np.any(mj == 0):
        raise RuntimeError("observed pair with a zero marginal")
    values = np.log(table.n * counts.astype(float)) - np.log(ni) - np.log(mj) + shift
    if clip_negative:
        values = np.maximum(values, 0.0)
    return RelatednessEstimate(rows, cols, values, table.num_items, shift, clip_negative)


def relatedness_histogram(est: RelatednessEstimate, bins: int | np.ndarray = 50) -> dict:
    """Histogram of stored values and the share of negative ones."""
    if len(est) == 0:
        raise ValueError("empty relatedness estimate")
    v = est.values
    if np.ptp(v) == 0 and np.ndim(bins) == 0:
        bins = np.array([v[0] - 0.5, v[0] + 0.5])
    counts, edges = np.histogram(v, bins=bins)
    return {
        "counts": counts,
        "edges": edges,
        "negative_fraction": float(np.mean(v < 0)),
        "total": int(len(v)),
    }
