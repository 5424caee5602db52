"""Interaction data, neighborhood mechanisms and synthetic corpora.

Everything downstream consumes a :class:`PairStream` of ``(center, context)``
item indices. Two mechanisms produce it from an :class:`InteractionLog`:
previous-purchase windows over user sequences, and second-order biased random
walks over the session co-purchase graph.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

_logger = logging.getLogger(__name__)

INSTACART_SCHEMA = {
    "session": "order_id",
    "user": "user_id",
    "item": "product_id",
    "position": "add_to_cart_order",
}

DEFAULT_WINDOW = 5


class DataError(ValueError):
    """Raised for malformed or unusable interaction data."""


@dataclass
class Vocabulary:
    """Bijection between opaque external item ids and dense indices."""

    items: list[str]
    frequency: np.ndarray = None

    def __post_init__(self):
        self.items = [str(x) for x in self.items]
        self.index = {item: i for i, item in enumerate(self.items)}
        if len(self.index) != len(self.items):
            raise DataError("duplicate item identifiers in vocabulary")
        if self.frequency is None:
            self.frequency = np.zeros(len(self.items), dtype=np.int64)
        self.frequency = np.asarray(self.frequency, dtype=np.int64)
        if self.frequency.shape != (len(self.items),):
            raise DataError("frequency vector does not match vocabulary size")
        if np.any(self.frequency < 0):
            raise DataError("negative item frequency")

    def __len__(self) -> int:
        return len(self.items)

    def encode(self, ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index[str(x)] for x in ids], dtype=np.int64)

    def decode(self, idx: Iterable[int]) -> list[str]:
        return [self.items[int(i)] for i in idx]


@dataclass
class InteractionLog:
    """Per-user chronological records.

    Arrays are aligned; rows are sorted by user, then session order, then
    position. ``user`` and ``session`` hold dense integer codes.
    """

    user: np.ndarray
    session: np.ndarray
    item: np.ndarray
    position: np.ndarray
    num_items: int

    def __post_init__(self):
        self.user = np.asarray(self.user, dtype=np.int64)
        self.session = np.asarray(self.session, dtype=np.int64)
        self.item = np.asarray(self.item, dtype=np.int64)
        self.position = np.asarray(self.position, dtype=np.int64)
        n = len(self.item)
        if not (len(self.user) == len(self.session) == len(self.position) == n):
            raise DataError("log arrays have different lengths")
        if n and (self.item.min() < 0 or self.item.max() >= self.num_items):
            raise DataError("item index outside the vocabulary")

    def __len__(self) -> int:
        return len(self.item)

    def user_slices(self) -> list[slice]:
        """Contiguous row ranges, one per user."""
        return _runs(self.user)

    def session_slices(self) -> list[slice]:
        return _runs(self.session)


def _runs(codes: np.ndarray) -> list[slice]:
    if len(codes) == 0:
        return []
    cut = np.flatnonzero(np.diff(codes)) + 1
    starts = np.concatenate([[0], cut])
    stops = np.concatenate([cut, [len(codes)]])
    return [slice(int(a), int(b)) for a, b in zip(starts, stops)]


def make_log(
    user: Sequence, session: Sequence, item: Sequence[int], position: Sequence[int], num_items: int
) -> InteractionLog:
    """Build an :class:`InteractionLog` from unsorted records.

    Users keep their order of first appearance; sessions are ordered by first
    appearance within the user; records by position within the session.
    """
    user_codes = _first_seen_codes(user)
    session_codes = _first_seen_codes([(u, s) for u, s in zip(user_codes, session)])
    position = np.asarray(position, dtype=np.int64)
    order = np.lexsort((position, session_codes, user_codes))
    log = InteractionLog(
        user=user_codes[order],
        session=session_codes[order],
        item=np.asarray(item, dtype=np.int64)[order],
        position=position[order],
        num_items=num_items,
    )
    for sl in log.session_slices():
        pos = log.position[sl]
        if np.any(np.diff(pos) <= 0):
            raise DataError(f"positions are not strictly increasing in session {log.session[sl.start]}")
    return log


def _first_seen_codes(values: Sequence) -> np.ndarray:
    codes: dict = {}
    return np.array([codes.setdefault(v, len(codes)) for v in values], dtype=np.int64)


def ingest_transactions(
    path: str | Path,
    schema: dict[str, str] | None = None,
    min_frequency: int = 1,
) -> tuple[Vocabulary, InteractionLog]:
    """Read a transaction CSV into a vocabulary and a chronological log.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row.
    schema : dict, optional
        Maps the logical columns ``session``, ``user``, ``item``, ``position``
        to CSV header names. Defaults to the Instacart layout.
    min_frequency : int
        Items seen fewer times are dropped. The default keeps everything.
    """
    schema = dict(INSTACART_SCHEMA if schema is None else schema)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")

    users, sessions, items, positions = [], [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError("no records")
        header = [h.strip() for h in header]
        cols = {}
        for key in ("session", "user", "item", "position"):
            name = schema.get(key)
            if name is None or name not in header:
                raise DataError(f"unknown column {name!r} for {key!r}")
            cols[key] = header.index(name)
        width = max(cols.values()) + 1
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < width:
                raise DataError(f"malformed row at line {lineno}: expected {width} fields")
            try:
                pos = int(row[cols["position"]])
            except ValueError:
                raise DataError(f"malformed row at line {lineno}: bad position {row[cols['position']]!r}") from None
            users.append(row[cols["user"]].strip())
            sessions.append(row[cols["session"]].strip())
            items.append(row[cols["item"]].strip())
            positions.append(pos)
    if not items:
        raise DataError("no records")

    ids, inverse, counts = np.unique(np.array(items), return_inverse=True, return_counts=True)
    keep = counts >= min_frequency
    if not keep.all():
        mask = keep[inverse]
        _logger.info("dropping %d items below frequency %d", int((~keep).sum()), min_frequency)
        users = [u for u, m in zip(users, mask) if m]
        sessions = [s for s, m in zip(sessions, mask) if m]
        positions = [p for p, m in zip(positions, mask) if m]
        remap = -np.ones(len(ids), dtype=np.int64)
        remap[keep] = np.arange(keep.sum())
        inverse = remap[inverse[mask]]
        ids, counts = ids[keep], counts[keep]
    vocab = Vocabulary(list(ids), counts)
    return vocab, make_log(users, sessions, inverse, positions, len(vocab))


def split_sessions_by_gap(log: InteractionLog, timestamps: np.ndarray, max_gap: float) -> InteractionLog:
    """Re-derive session ids: a new session starts when the time gap exceeds ``max_gap``."""
    timestamps = np.asarray(timestamps, dtype=float)
    new = np.ones(len(log), dtype=bool)
    new[1:] = (np.diff(timestamps) > max_gap) | (np.diff(log.user) != 0)
    session = np.cumsum(new) - 1
    return InteractionLog(log.user, session, log.item, np.arange(len(log)), log.num_items)


@dataclass
class PairStream:
    """Finite, replayable sequence of ``(center, context)`` pairs.

    ``group`` (optional) labels the neighborhood each pair came from, so the
    neighborhoods themselves can be rebuilt. ``suppressed`` counts pairs that
    were dropped because center and context were the same item.
    """

    centers: np.ndarray
    contexts: np.ndarray
    provenance: str = "synthetic"
    group: np.ndarray | None = None
    suppressed: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.int64)
        self.contexts = np.asarray(self.contexts, dtype=np.int64)
        if self.centers.shape != self.contexts.shape:
            raise DataError("centers and contexts differ in length")
        if np.any(self.centers == self.contexts):
            raise DataError("pair with center == context")

    def __len__(self) -> int:
        return len(self.centers)

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.centers.tolist(), self.contexts.tolist()))

    def shard(self, num_shards: int) -> list["PairStream"]:
        bounds = np.linspace(0, len(self), num_shards + 1).astype(int)
        return [
            PairStream(self.centers[a:b], self.contexts[a:b], self.provenance)
            for a, b in zip(bounds[:-1], bounds[1:])
        ]

    def neighborhoods(self) -> list[np.ndarray]:
        """Item sets ``{center} | contexts`` per neighborhood group."""
        if self.group is None:
            raise DataError("stream carries no neighborhood groups")
        out = []
        for sl in _runs(self.group):
            out.append(np.unique(np.concatenate([self.centers[sl.start : sl.start + 1], self.contexts[sl]])))
        return out


def _window_pairs(seq: np.ndarray, window: int, symmetric: bool):
    """Previous-``window`` pairs over one sequence, ordered by position then lag."""
    t = np.arange(len(seq))[:, None]
    lag = np.arange(1, window + 1)[None, :]
    valid = t - lag >= 0
    rows, cols = np.nonzero(valid)
    centers = seq[rows]
    contexts = seq[rows - lag[0, cols]]
    groups = rows
    if symmetric:
        centers, contexts = (
            np.stack([centers, contexts], axis=1).ravel(),
            np.stack([contexts, centers], axis=1).ravel(),
        )
        groups = np.repeat(groups, 2)
    return centers, contexts, groups


def sequence_pairs(log: InteractionLog, window: int = DEFAULT_WINDOW, symmetric: bool = False) -> PairStream:
    """Pairs ``(item_t, item_{t-m})`` for ``m = 1..min(window, t)`` per user sequence.

    With ``symmetric=True`` the reversed pair is emitted right after each pair.
    Pairs whose two items coincide are suppressed and counted.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    cs, xs, gs = [], [], []
    offset = 0
    for sl in log.user_slices():
        c, x, g = _window_pairs(log.item[sl], window, symmetric)
        cs.append(c)
        xs.append(x)
        gs.append(g + offset)
        offset += sl.stop - sl.start
    return _finish_stream(cs, xs, gs, "sequence-window")


def basket_pairs(log: InteractionLog) -> PairStream:
    """All ordered pairs of distinct records within each session.

    Groups are sessions, so ``neighborhoods()`` returns the baskets. Pairs
    are ordered by session, then center position, then context position.
    """
    slices = log.session_slices()
    if not slices:
        return _finish_stream([], [], [], "basket")
    starts = np.array([sl.start for sl in slices])
    sizes = np.array([sl.stop - sl.start for sl in slices])
    rec_size = np.repeat(sizes, sizes)
    rec_start = np.repeat(starts, sizes)
    rec_pos = np.arange(len(log.item)) - rec_start
    fan = rec_size - 1
    center = np.repeat(np.arange(len(log.item)), fan)
    k = np.arange(fan.sum()) - np.repeat(np.cumsum(fan) - fan, fan)
    other = np.repeat(rec_start, fan) + k + (k >= np.repeat(rec_pos, fan))
    group = np.repeat(np.repeat(np.arange(len(slices)), sizes), fan)
    return _finish_stream([log.item[center]], [log.item[other]], [group], "basket")


def _finish_stream(cs, xs, gs, provenance) -> PairStream:
    if cs:
        c, x, g = np.concatenate(cs), np.concatenate(xs), np.concatenate(gs)
    else:
        c = x = g = np.zeros(0, dtype=np.int64)
    keep = c != x
    suppressed = int((~keep).sum())
    if suppressed:
        _logger.debug("suppressed %d self pairs", suppressed)
    return PairStream(c[keep], x[keep], provenance, g[keep], suppressed)


@dataclass
class WeightedGraph:
    """Undirected co-purchase graph stored as a symmetric CSR matrix."""

    adjacency: sp.csr_matrix

    def __post_init__(self):
        adj = sp.csr_matrix(self.adjacency, dtype=np.int64)
        adj.eliminate_zeros()
        adj.sort_indices()
        if (adj != adj.T).nnz:
            raise DataError("adjacency is not symmetric")
        if adj.diagonal().any():
            raise DataError("graph has self-loops")
        self.adjacency = adj

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    def weight(self, i: int, j: int) -> int:
        return int(self.adjacency[i, j])

    def neighbors(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.adjacency.indptr[v], self.adjacency.indptr[v + 1]
        return self.adjacency.indices[a:b], self.adjacency.data[a:b]

    def edges(self) -> list[tuple[int, int, int]]:
        upper = sp.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(upper.row.tolist(), upper.col.tolist(), upper.data.tolist()))


def build_session_graph(log: InteractionLog) -> WeightedGraph:
    """Edge weight ``(i, j)`` = number of sessions containing both items."""
    incidence = sp.csr_matrix(
        (np.ones(len(log), dtype=np.int64), (log.session, log.item)),
        shape=(int(log.session.max()) + 1 if len(log) else 0, log.num_items),
    )
    incidence.data[:] = 1  # duplicates inside a session count once
    incidence.sum_duplicates()
    incidence.data[:] = 1
    adj = (incidence.T @ incidence).tolil()
    adj.setdiag(0)
    return WeightedGraph(adj.tocsr())


def random_walk_pairs(
    graph: WeightedGraph,
    walk_length: int = 20,
    walks_per_node: int = 10,
    p: float = 1.0,
    q: float = 1.0,
    context_size: int = DEFAULT_WINDOW,
    seed: int = 0,
) -> PairStream:
    """Second-order biased random walks, windowed into pairs.

    From a walk at ``v`` having arrived from ``t``, the move to neighbor ``x``
    has weight ``w(v, x)`` scaled by ``1/p`` if ``x == t``, by 1 if ``x`` is
    adjacent to ``t`` and by ``1/q`` otherwise. Each start node draws from its
    own seed stream, so output does not depend on how nodes are scheduled.
    """
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    adj = graph.adjacency
    degree = np.diff(adj.indptr)
    isolated = np.flatnonzero(degree == 0)
    if len(isolated):
        _logger.warning("skipping %d isolated nodes", len(isolated))
    biased = not (p == 1.0 and q == 1.0)
    cum = [np.cumsum(adj.data[adj.indptr[v] : adj.indptr[v + 1]]).astype(float) for v in range(graph.num_nodes)]
    root = np.random.SeedSequence(seed)

    cs, xs, gs = [], [], []
    offset = 0
    for start in range(graph.num_nodes):
        if degree[start] == 0:
            continue
        rng = np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(start,)))
        for _ in range(walks_per_node):
            walk = _one_walk(adj, cum, start, walk_length, p, q, biased, rng)
            c, x, g = _window_pairs(walk, context_size, symmetric=False)
            cs.append(c)
            xs.append(x)
            gs.append(g + offset)
            offset += len(walk)
    return _finish_stream(cs, xs, gs, "random-walk")


def _one_walk(adj, cum, start, length, p, q, biased, rng) -> np.ndarray:
    walk = [start]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    while len(walk) < length:
        v = walk[-1]
        nbrs = indices[indptr[v] : indptr[v + 1]]
        if len(walk) == 1 or not biased:
            c = cum[v]
            walk.append(int(nbrs[np.searchsorted(c, rng.random() * c[-1], side="right")]))
            continue
        t = walk[-2]
        w = data[indptr[v] : indptr[v + 1]].astype(float)
        t_nbrs = indices[indptr[t] : indptr[t + 1]]
        scale = np.where(np.isin(nbrs, t_nbrs, assume_unique=True), 1.0, 1.0 / q)
        scale[nbrs == t] = 1.0 / p
        c = np.cumsum(w * scale)
        walk.append(int(nbrs[np.searchsorted(c, rng.random() * c[-1], side="right")]))
    return np.asarray(walk, dtype=np.int64)


def transition_probabilities(graph: WeightedGraph, prev: int | None, cur: int, p: float = 1.0, q: float = 1.0):
    """Normalized next-step distribution over the neighbors of ``cur``."""
    nbrs, w = graph.neighbors(cur)
    w = w.astype(float)
    if prev is not None:
        t_nbrs, _ = graph.neighbors(prev)
        scale = np.where(np.isin(nbrs, t_nbrs), 1.0, 1.0 / q)
        scale[nbrs == prev] = 1.0 / p
        w = w * scale
    return nbrs, w / w.sum()


# --------------------------------------------------------------------------
# Synthetic corpora
# --------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Planted class model over ordered item pairs.

    The unnormalized pair weight is ``within_prob`` for two distinct items of
    the same class and ``cross_prob`` otherwise, times item popularity.
    Pairs in ``independent_pairs`` are re-weighted so the pair probability
    equals the product of the marginals. ``sequence_length == 2`` writes each
    drawn pair as its own two-record user; longer sequences are Markov chains
    driven by the pair model's conditionals.
    """

    num_items: int = 20
    num_classes: int = 2
    within_prob: float = 0.8
    cross_prob: float = 0.2
    num_records: int = 10_000
    independent_pairs: list[tuple[int, int]] = field(default_factory=list)
    seed: int = 0
    sequence_length: int = 2
    session_length: int = 5
    popularity_exponent: float = 0.0

    def validate(self):
        if not (0 < self.cross_prob < 1 and 0 < self.within_prob < 1):
            raise ValueError("probabilities must lie in (0, 1)")
        if not self.within_prob > self.cross_prob:
            raise ValueError("within_prob must exceed cross_prob")
        if self.num_items < 2 or self.num_classes < 1 or self.num_classes > self.num_items:
            raise ValueError("need at least two items and 1 <= num_classes <= num_items")
        if self.sequence_length < 2:
            raise ValueError("sequence_length must be >= 2")
        for i, j in self.independent_pairs:
            if i == j or not (0 <= i < self.num_items and 0 <= j < self.num_items):
                raise ValueError(f"bad independent pair {(i, j)}")


@dataclass
class SyntheticCorpus:
    vocab: Vocabulary
    log: InteractionLog
    truth: np.ndarray
    joint: np.ndarray
    classes: np.ndarray


def planted_joint(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric pair distribution of the class model and the class labels."""
    spec.validate()
    classes = np.arange(spec.num_items) % spec.num_classes
    pop = (1.0 + np.arange(spec.num_items)) ** (-spec.popularity_exponent)
    same = classes[:, None] == classes[None, :]
    w = np.where(same, spec.within_prob, spec.cross_prob) * np.outer(pop, pop)
    np.fill_diagonal(w, 0.0)
    joint = w / w.sum()
    if spec.independent_pairs:
        rows = np.array([i for i, j in spec.independent_pairs] + [j for i, j in spec.independent_pairs])
        cols = np.array([j for i, j in spec.independent_pairs] + [i for i, j in spec.independent_pairs])
        # fixed point: marginals depend on the re-weighted cells
        for _ in range(10_000):
            marg = joint.sum(axis=1)
            new = joint.copy()
            new[rows, cols] = marg[rows] * marg[cols]
            new /= new.sum()
            if np.max(np.abs(new - joint)) < 1e-17:
                joint = new
                break
            joint = new
    return joint, classes


def truth_relatedness(joint: np.ndarray) -> np.ndarray:
    """``log P_ij / (P_i P_j)`` with ``-inf`` where the pair has no mass."""
    marg = joint.sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.log(joint) - np.log(np.outer(marg, marg))


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    """Draw a corpus from the planted class model.

    Returns the vocabulary, the log, the analytic relatedness matrix of the
    pair model (exactly 0 for planted-independent pairs), the joint and the
    class labels.
    """
    joint, classes = planted_joint(spec)
    truth = truth_relatedness(joint)
    for i, j in spec.independent_pairs:
        truth[i, j] = truth[j, i] = 0.0
    rng = np.random.default_rng(spec.seed)
    n_items = spec.num_items
    if spec.sequence_length == 2:
        flat = rng.choice(n_items * n_items, size=spec.num_records, p=joint.ravel())
        center, context = np.divmod(flat, n_items)
        item = np.stack([context, center], axis=1).ravel()
        user = np.repeat(np.arange(spec.num_records), 2)
        session = user
        position = np.tile([0, 1], spec.num_records)
    else:
        cond = joint / joint.sum(axis=1, keepdims=True)
        cum = np.cumsum(cond, axis=1)
        n_users = max(1, spec.num_records // spec.sequence_length)
        seq = np.empty((n_users, spec.sequence_length), dtype=np.int64)
        seq[:, 0] = rng.choice(n_items, size=n_users, p=joint.sum(axis=1))
        for t in range(1, spec.sequence_length):
            u = rng.random(n_users)
            nxt = (cum[seq[:, t - 1]] < u[:, None]).sum(axis=1)
            seq[:, t] = np.minimum(nxt, n_items - 1)
        item = seq.ravel()
        user = np.repeat(np.arange(n_users), spec.sequence_length)
        pos = np.tile(np.arange(spec.sequence_length), n_users)
        session = user * spec.sequence_length + pos // spec.session_length
        position = pos
    log = InteractionLog(user, _dense_codes(session), item, position, n_items)
    vocab = Vocabulary([f"item{i}" for i in range(n_items)], np.bincount(item, minlength=n_items))
    return SyntheticCorpus(vocab, log, truth, joint, classes)


def _dense_codes(x: np.ndarray) -> np.ndarray:
    _, inv = np.unique(x, return_inverse=True)
    return inv.astype(np.int64)


# --------------------------------------------------------------------------
# Set-level basket model (higher-order and functional relations)
# --------------------------------------------------------------------------


@dataclass
class BasketModel:
    """Latent-class basket model with independent item inclusion.

    A basket picks class ``c`` with probability ``class_probs[c]`` and then
    contains each item ``i`` independently with probability
    ``inclusion[c, i]``. Set probabilities are therefore exact:
    ``p(A) = sum_c class_probs[c] * prod_{a in A} inclusion[c, a]``.
    """

    class_probs: np.ndarray
    inclusion: np.ndarray

    def __post_init__(self):
        self.class_probs = np.asarray(self.class_probs, dtype=float)
        self.inclusion = np.asarray(self.inclusion, dtype=float)
        if not np.isclose(self.class_probs.sum(), 1.0):
            raise ValueError("class probabilities must sum to 1")
        if np.any((self.inclusion <= 0) | (self.inclusion >= 1)):
            raise ValueError("inclusion probabilities must lie in (0, 1)")

    @property
    def num_items(self) -> int:
        return self.inclusion.shape[1]

    def set_prob(self, items: Iterable[int]) -> float:
        """Probability that a basket contains every item of the set."""
        idx = np.unique(np.asarray(list(items), dtype=np.int64))
        return float(self.class_probs @ np.prod(self.inclusion[:, idx], axis=1))

    def marginals(self) -> np.ndarray:
        return self.class_probs @ self.inclusion

    def pair_probs(self) -> np.ndarray:
        """``p({i, j})`` for all pairs; the diagonal holds ``p({i})``."""
        pij = (self.inclusion.T * self.class_probs) @ self.inclusion
        np.fill_diagonal(pij, self.marginals())
        return pij

    def relatedness(self) -> np.ndarray:
        """Set-semantics relatedness ``log p({i, e}) / (p(i) p(e))``."""
        m = self.marginals()
        return np.log(self.pair_probs()) - np.log(np.outer(m, m))

    def conditional(self, items: Iterable[int]) -> np.ndarray:
        """``p(e in basket | items in basket)`` for every item ``e``."""
        idx = np.unique(np.asarray(list(items), dtype=np.int64))
        post = self.class_probs * np.prod(self.inclusion[:, idx], axis=1)
        out = (post / post.sum()) @ self.inclusion
        out[idx] = 1.0
        return out

    def sample_membership(self, num_baskets: int, rng: np.random.Generator) -> np.ndarray:
        """Boolean ``baskets x items`` membership matrix."""
        cls = rng.choice(len(self.class_probs), size=num_baskets, p=self.class_probs)
        return rng.random((num_baskets, self.num_items)) < self.inclusion[cls]

    def sample_log(self, num_baskets: int, seed: int = 0) -> InteractionLog:
        """Each non-empty basket becomes one user with a single session, in random order."""
        rng = np.random.default_rng(seed)
        member = self.sample_membership(num_baskets, rng)
        keys = np.where(member, rng.random(member.shape), np.inf)
        order = np.argsort(keys, axis=1, kind="stable")
        sizes = member.sum(axis=1)
        take = np.arange(self.num_items)[None, :] < sizes[:, None]
        item = order[take]
        user = np.repeat(np.arange(num_baskets), sizes)
        position = np.nonzero(take)[1]
        keep = np.isin(user, np.flatnonzero(sizes > 0))
        user = _dense_codes(user[keep]) if keep.any() else user[keep]
        return InteractionLog(user, user, item[keep], position[keep], self.num_items)


def factor_grid_model(
    num_groups: int,
    num_styles: int,
    bases_per_group: int,
    seed: int = 0,
    on: float = 0.35,
    off: float = 0.03,
) -> tuple[BasketModel, np.ndarray, np.ndarray]:
    """Product-form basket model over a (base, style) item grid.

    Item ``(b, v)`` is included with probability ``f[g, b] * h[s, v]`` under
    latent class ``(g, s)``; bases belong to groups. Under this model the
    relatedness of grid items is additive in base and style terms, so a style
    change is a functional relation with a constant offset.

    Returns the model, the base index and the style index of each item.
    """
    rng = np.random.default_rng(seed)
    num_bases = num_groups * bases_per_group
    group_of_base = np.repeat(np.arange(num_groups), bases_per_group)
    f = np.where(group_of_base[None, :] == np.arange(num_groups)[:, None], on, off)
    f = np.sqrt(f) * rng.uniform(0.85, 1.0, size=f.shape)
    h = np.where(np.eye(num_styles, dtype=bool), np.sqrt(on), np.sqrt(off))
    h = h * rng.uniform(0.85, 1.0, size=h.shape)
    base = np.repeat(np.arange(num_bases), num_styles)
    style = np.tile(np.arange(num_styles), num_bases)
    inclusion = np.einsum("gi,sj->gsij", f, h).reshape(num_groups * num_styles, num_bases, num_styles)
    inclusion = inclusion.reshape(num_groups * num_styles, num_bases * num_styles)
    class_probs = np.full(num_groups * num_styles, 1.0 / (num_groups * num_styles))
    return BasketModel(class_probs, inclusion), base, style
