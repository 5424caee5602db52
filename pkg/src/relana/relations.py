"""Higher-order and functional relations between products.

Higher-order: for a product set, pick the single item whose relatedness row
best matches the set's conditional distribution. Scoring by expected
relatedness and by KL divergence between conditionals select the same item
whenever the conditionals come from the same counts.

Functional: relation vectors are sums (or means) of row differences over
pairs sharing a relation; an analogy adds the vector to a query row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import xlogy

from .catalog import BasketModel, DataError, PairStream
from .cooccur import CooccurrenceTable, RelatednessEstimate
from .embed import EmbeddingPair

KL_SMOOTHING = 1e-9


@dataclass(frozen=True)
class ProductSet:
    items: tuple[int, ...]

    def __post_init__(self):
        items = tuple(int(i) for i in self.items)
        if not items:
            raise ValueError("product set is empty")
        if len(set(items)) != len(items):
            raise ValueError("product set has repeated items")
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class Conditional:
    probs: np.ndarray
    mode: str
    support: int

    @property
    def fallback(self) -> bool:
        return self.mode == "any-of"


def conditional_distribution(pset: ProductSet, source, num_items: int | None = None, mode: str = "joint") -> Conditional:
    """Distribution of co-occurring items given a product set.

    ``source`` is a :class:`PairStream` with neighborhood groups, a
    :class:`CooccurrenceTable` or a :class:`BasketModel` (exact). Set members
    get zero mass. With a stream, ``joint`` counts items over neighborhoods
    containing every member and falls back to ``any-of`` when there are
    none; a table supports the joint mode only for singletons.
    """
    idx = np.asarray(pset.items)
    if isinstance(source, BasketModel):
        p = source.conditional(idx).copy()
        p[idx] = 0.0
        return Conditional(p / p.sum(), "exact", 0)
    if isinstance(source, CooccurrenceTable):
        counts = np.asarray(source.pair_counts[idx].sum(axis=0)).ravel().astype(float)
        counts[idx] = 0.0
        used = "joint" if len(idx) == 1 else "any-of"
        if mode == "joint" and used != "joint":
            raise DataError("a pair table has no joint support for sets larger than one")
        if counts.sum() == 0:
            raise DataError("empty support")
        return Conditional(counts / counts.sum(), used, int(counts.sum()))
    if isinstance(source, PairStream):
        hoods = source.neighborhoods()
        n = num_items if num_items is not None else int(max(source.centers.max(), source.contexts.max())) + 1
        members = np.zeros(n, dtype=bool)
        members[idx] = True
        modes = ["joint", "any-of"] if mode == "joint" else [mode]
        for m in modes:
            counts = np.zeros(n)
            support = 0
            for h in hoods:
                hit = members[h].sum()
                if (m == "joint" and hit == len(idx)) or (m == "any-of" and hit > 0):
                    counts[h] += 1
                    support += 1
            counts[idx] = 0.0
            if counts.sum() > 0:
                return Conditional(counts / counts.sum(), m, support)
        if mode == "joint" and len(modes) == 1:
            raise DataError("empty joint support")
        raise DataError("empty support in both joint and any-of modes")
    raise TypeError(f"unsupported source {type(source).__name__}")


def _candidate_mask(num_items: int, exclude: Iterable[int], candidates) -> np.ndarray:
    mask = np.zeros(num_items, dtype=bool)
    if candidates is None:
        mask[:] = True
        mask[list(exclude)] = False
    else:
        mask[np.asarray(list(candidates), dtype=np.int64)] = True
    return mask


@dataclass
class HigherOrderResult:
    best: int
    scores: np.ndarray
    dominates_all: bool


def higher_order_by_relatedness(
    pset: ProductSet,
    est: RelatednessEstimate | np.ndarray,
    cond: Conditional | np.ndarray,
    candidates: Iterable[int] | None = None,
) -> HigherOrderResult:
    """``argmax_c sum_e cond(e) R_{c,e}``; missing relatedness counts as 0.

    Candidates default to every item outside the set. Non-candidates score
    ``-inf``; ties go to the smallest index.
    """
    R = est.to_dense(0.0) if isinstance(est, RelatednessEstimate) else np.asarray(est, dtype=float)
    p = cond.probs if isinstance(cond, Conditional) else np.asarray(cond, dtype=float)
    mask = _candidate_mask(R.shape[0], pset.items, candidates)
    support = p > 0
    scores = np.full(R.shape[0], -np.inf)
    scores[mask] = R[np.ix_(mask, support)] @ p[support]
    best = int(np.argmax(scores))
    others = np.delete(scores[mask], np.flatnonzero(np.flatnonzero(mask) == best))
    return HigherOrderResult(best, scores, bool(np.all(scores[best] >= others)))


def candidate_conditionals(table: CooccurrenceTable) -> np.ndarray:
    """Row-normalized pair counts ``N_{c,e} / N_c``."""
    counts = table.pair_counts.toarray().astype(float)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, counts / totals, 0.0)


def higher_order_by_kl(
    pset: ProductSet,
    cond: Conditional | np.ndarray,
    table: CooccurrenceTable,
    candidates: Iterable[int] | None = None,
    smoothing: float = KL_SMOOTHING,
) -> HigherOrderResult:
    """``argmin_c KL(cond || p(. | c))`` with ``smoothing`` added to candidate conditionals."""
    p = cond.probs if isinstance(cond, Conditional) else np.asarray(cond, dtype=float)
    Q = candidate_conditionals(table) + smoothing
    mask = _candidate_mask(table.num_items, pset.items, candidates)
    support = p > 0
    entropy_part = float(np.sum(xlogy(p, p)))
    kl = np.full(table.num_items, np.inf)
    kl[mask] = entropy_part - np.log(Q[np.ix_(mask, support)]) @ p[support]
    best = int(np.argmin(kl))
    return HigherOrderResult(best, kl, bool(np.all(kl[best] <= kl[mask])))


# --------------------------------------------------------------------------
# Functional relations
# --------------------------------------------------------------------------


@dataclass
class RelationSet:
    pairs: list[tuple[int, int]]

    def __post_init__(self):
        self.pairs = [(int(i), int(j)) for i, j in self.pairs]

    @property
    def sources(self) -> list[int]:
        return [i for i, _ in self.pairs]

    @property
    def targets(self) -> list[int]:
        return [j for _, j in self.pairs]


@dataclass
class RelationVector:
    z: np.ndarray
    source: str
    count: int


def _rows(source) -> tuple[np.ndarray, str]:
    if isinstance(source, RelatednessEstimate):
        return source.to_dense(0.0), "relatedness"
    if isinstance(source, EmbeddingPair):
        return source.Z, "embedding"
    return np.asarray(source, dtype=float), "relatedness"


def relation_vector(rel: RelationSet, source, reduce: str = "sum") -> RelationVector:
    """``sum_{(i,j)} row_j - row_i``, or its mean with ``reduce="mean"``."""
    M, kind = _rows(source)
    z = np.zeros(M.shape[1])
    if rel.pairs:
        src = np.asarray(rel.sources)
        tgt = np.asarray(rel.targets)
        z = M[tgt].sum(axis=0) - M[src].sum(axis=0)
        if reduce == "mean":
            z = z / len(rel.pairs)
        elif reduce != "sum":
            raise ValueError(f"unknown reduce {reduce!r}")
    return RelationVector(z, kind, len(rel.pairs))


@dataclass
class AnalogyResult:
    ranking: np.ndarray
    scores: np.ndarray
    residual: np.ndarray

    @property
    def top(self) -> int:
        return int(self.ranking[0])


def analogy_predict(
    i_star: int,
    z_r: RelationVector | np.ndarray,
    source,
    candidates: Sequence[int] | None = None,
    metric: str | None = None,
    skip_self: bool | None = None,
) -> AnalogyResult:
    """Rank candidates by closeness of their row to ``row_{i*} + z_r``.

    Relatedness rows use Euclidean distance (ascending), embeddings cosine
    similarity (descending). Self-relatedness is never observed, so by
    default relatedness distances skip coordinates ``i*`` and the candidate
    itself. ``residual`` is ``row_top - row_{i*} - z_r``.
    """
    M, kind = _rows(source)
    z = z_r.z if isinstance(z_r, RelationVector) else np.asarray(z_r, dtype=float)
    metric = metric or ("cosine" if kind == "embedding" else "euclidean")
    skip_self = (kind == "relatedness") if skip_self is None else skip_self
    cand = np.setdiff1d(np.arange(M.shape[0]), [i_star]) if candidates is None else np.asarray(candidates)
    query = M[i_star] + z
    if metric == "euclidean":
        sq = (M[cand] - query) ** 2
        if skip_self:
            sq[:, i_star] = 0.0
            sq[np.arange(len(cand)), cand] = 0.0
        scores = np.sqrt(sq.sum(axis=1))
        order = np.lexsort((cand, scores))
    elif metric == "cosine":
        norms = np.linalg.norm(M[cand], axis=1) * np.linalg.norm(query)
        with np.errstate(invalid="ignore", divide="ignore"):
            scores = np.where(norms > 0, M[cand] @ query / norms, 0.0)
        order = np.lexsort((cand, -scores))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    ranking = cand[order]
    return AnalogyResult(ranking, scores[order], M[ranking[0]] - query)


def tau(model: BasketModel, items: Iterable[int], given: int | None = None) -> float:
    """Dependence among a set: ``log p(A) / prod p(a)``, optionally conditional on item ``given``."""
    A = list(dict.fromkeys(int(a) for a in items))
    if given is None:
        return float(np.log(model.set_prob(A)) - sum(np.log(model.set_prob([a])) for a in A))
    pe = model.set_prob([given])
    joint = model.set_prob(A + [given]) / pe
    singles = sum(np.log(model.set_prob([a, given]) / pe) for a in A)
    return float(np.log(joint) - singles)


@dataclass
class ResidualDecomposition:
    residual: np.ndarray
    log_ratio: np.ndarray
    tau_target_given: np.ndarray
    tau_query_given: np.ndarray
    tau_target: float
    tau_query: float
    terms: dict = field(default_factory=dict)

    def total(self) -> np.ndarray:
        return self.log_ratio - self.tau_target_given + self.tau_query_given + self.tau_target - self.tau_query


def residual_decomposition(model: BasketModel, i_star: int, j_star: int, rel: RelationSet) -> ResidualDecomposition:
    """Exact split of ``R_{j*} - R_{i*} - z_r`` (literal sum) under a known basket model.

    With ``A = {j*} + sources`` and ``B = {i*} + targets``, for every item
    ``e``:

        residual_e = log p(e|A)/p(e|B) - tau(A|e) + tau(B|e) + tau(A) - tau(B)

    ``R`` is the model's set-semantics relatedness. The two sets must each
    consist of distinct items.
    """
    A = [j_star] + rel.sources
    B = [i_star] + rel.targets
    if len(set(A)) != len(A) or len(set(B)) != len(B):
        raise ValueError("query, target and relation items must be distinct")
    R = model.relatedness()
    z = relation_vector(rel, R).z
    residual = R[j_star] - R[i_star] - z
    m = model.num_items
    pA, pB = model.set_prob(A), model.set_prob(B)
    log_ratio = np.array([np.log(model.set_prob(A + [e]) / pA) - np.log(model.set_prob(B + [e]) / pB) for e in range(m)])
    tA = np.array([tau(model, A, e) for e in range(m)])
    tB = np.array([tau(model, B, e) for e in range(m)])
    return ResidualDecomposition(residual, log_ratio, tA, tB, tau(model, A), tau(model, B))


# --------------------------------------------------------------------------
# K-means over embedding differences
# --------------------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective_trace: list[float]

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _sq_dists(X, C):
    return np.maximum((X**2).sum(1)[:, None] - 2 * X @ C.T + (C**2).sum(1)[None, :], 0.0)


def kmeans_plus_plus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    d2 = _sq_dists(X, np.array(centers)).ravel()
    for _ in range(1, K):
        total = d2.sum()
        pick = rng.choice(len(X), p=d2 / total) if total > 0 else rng.integers(len(X))
        centers.append(X[pick])
        d2 = np.minimum(d2, _sq_dists(X, X[pick : pick + 1]).ravel())
    return np.array(centers)


def kmeans(X: np.ndarray, K: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding.

    An emptied cluster is re-seeded at the point farthest from its centroid.
    """
    X = np.asarray(X, dtype=float)
    if not 1 <= K <= len(X):
        raise ValueError("K must lie in [1, number of points]")
    rng = np.random.default_rng(seed)
    C = kmeans_plus_plus(X, K, rng)
    trace = []
    labels = np.zeros(len(X), dtype=np.int64)
    for _ in range(max_iter):
        D = _sq_dists(X, C)
        labels = np.argmin(D, axis=1)
        trace.append(float(D[np.arange(len(X)), labels].sum()))
        newC = C.copy()
        for c in range(K):
            members = labels == c
            if members.any():
                newC[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(D[np.arange(len(X)), labels]))
                newC[c] = X[far]
                labels[far] = c
        if np.allclose(newC, C, rtol=0, atol=1e-12):
            C = newC
            break
        C = newC
    D = _sq_dists(X, C)
    labels = np.argmin(D, axis=1)
    trace.append(float(D[np.arange(len(X)), labels].sum()))
    return KMeansResult(labels, C, trace)


def kmeans_diffs(
    anchor_pairs: Sequence[tuple[int, int]],
    pair: EmbeddingPair | np.ndarray,
    K: int,
    seed: int = 0,
    max_iter: int = 100,
) -> KMeansResult:
    """Cluster ``z_anchor - z_reco`` over the given pairs."""
    Z = pair.Z if isinstance(pair, EmbeddingPair) else np.asarray(pair, dtype=float)
    a = np.array([p[0] for p in anchor_pairs], dtype=np.int64)
    r = np.array([p[1] for p in anchor_pairs], dtype=np.int64)
    return kmeans(Z[a] - Z[r], K, seed, max_iter)
