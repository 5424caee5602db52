"""Downstream evaluation: next-item ranking, label classification and cart strategies."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .catalog import InteractionLog
from .embed import EmbeddingPair

_logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Split and ranking
# --------------------------------------------------------------------------


@dataclass
class SplitSpec:
    train: InteractionLog
    users: np.ndarray
    valid_items: np.ndarray
    test_items: np.ndarray
    history: list[np.ndarray]
    excluded: int

    def __len__(self) -> int:
        return len(self.users)


def leave_last_split(log: InteractionLog) -> SplitSpec:
    """Per user: all but the last two records train, second-to-last validates, last tests.

    Users with fewer than three records are dropped and counted.
    """
    keep = np.zeros(len(log), dtype=bool)
    users, valid, test, history = [], [], [], []
    excluded = 0
    for sl in log.user_slices():
        if sl.stop - sl.start < 3:
            excluded += 1
            continue
        keep[sl.start : sl.stop - 2] = True
        users.append(log.user[sl.start])
        valid.append(log.item[sl.stop - 2])
        test.append(log.item[sl.stop - 1])
        history.append(log.item[sl.start : sl.stop - 2])
    train = InteractionLog(log.user[keep], log.session[keep], log.item[keep], log.position[keep], log.num_items)
    return SplitSpec(
        train,
        np.asarray(users, dtype=np.int64),
        np.asarray(valid, dtype=np.int64),
        np.asarray(test, dtype=np.int64),
        history,
        excluded,
    )


def rank_candidates(query: np.ndarray, pair: EmbeddingPair | np.ndarray, exclude=(), which: str = "Z") -> np.ndarray:
    """Items by descending ``<query, z_j>``, ties by index, excluded items removed."""
    M = pair.export(which) if isinstance(pair, EmbeddingPair) else np.asarray(pair, dtype=float)
    query = np.asarray(query, dtype=float)
    if query.shape != (M.shape[1],):
        raise ValueError("query dimension does not match the embeddings")
    scores = M @ query
    order = np.lexsort((np.arange(len(scores)), -scores))
    if len(exclude):
        order = order[~np.isin(order, np.asarray(list(exclude)))]
    return order


def ranking_metrics(position: int, count: int, k: int = 10) -> tuple[float, float, float, float]:
    """AUC, NDCG, recall@k and NDCG@k for a single positive at 1-based ``position``."""
    if count < 2:
        raise ValueError("AUC needs at least two candidates")
    if not 1 <= position <= count:
        raise ValueError("position outside the candidate list")
    auc = (count - position) / (count - 1)
    ndcg = 1.0 / np.log2(1 + position)
    hit = position <= k
    return auc, ndcg, float(hit), ndcg if hit else 0.0


@dataclass
class RankingReport:
    auc: float
    ndcg_full: float
    recall_at_k: float
    ndcg_at_k: float
    k: int
    std: dict = field(default_factory=dict)
    repetitions: int = 1
    candidates: str = "full"

    def to_json(self) -> dict:
        return {
            "auc": self.auc,
            "ndcg_full": self.ndcg_full,
            "recall_at_k": self.recall_at_k,
            "ndcg_at_k": self.ndcg_at_k,
            "k": self.k,
            "std": self.std,
            "repetitions": self.repetitions,
            "candidates": self.candidates,
        }


METRICS = ("auc", "ndcg_full", "recall_at_k", "ndcg_at_k")


def _positive_position(scores: np.ndarray, cand: np.ndarray, positive: int) -> int:
    """1-based rank of ``positive`` among ``cand`` under index tie-breaking."""
    s = scores[positive]
    better = (scores[cand] > s) | ((scores[cand] == s) & (cand < positive))
    return int(better.sum()) + 1


def evaluate_recommendation(
    split: SplitSpec,
    pair: EmbeddingPair | np.ndarray,
    k: int = 10,
    candidates: str = "full",
    num_negatives: int = 100,
    seed: int = 0,
    which: str = "Z",
) -> RankingReport:
    """Rank each user's test item from the embedding of the item preceding it.

    ``candidates="full"`` scores the catalog minus the user's training items
    (the positive is always kept); ``"sampled"`` scores the positive against
    ``num_negatives`` uniformly drawn non-history items.
    """
    M = pair.export(which) if isinstance(pair, EmbeddingPair) else np.asarray(pair, dtype=float)
    rng = np.random.default_rng(seed)
    num_items = M.shape[0]
    rows = []
    for u in range(len(split)):
        positive = int(split.test_items[u])
        scores = M @ M[split.valid_items[u]]
        allowed = np.ones(num_items, dtype=bool)
        allowed[split.history[u]] = False
        allowed[positive] = True
        cand = np.flatnonzero(allowed)
        if candidates == "sampled":
            pool = cand[cand != positive]
            negs = rng.choice(pool, size=min(num_negatives, len(pool)), replace=False)
            cand = np.sort(np.append(negs, positive))
        elif candidates != "full":
            raise ValueError(f"unknown candidate mode {candidates!r}")
        if len(cand) < 2:
            continue
        rows.append(ranking_metrics(_positive_position(scores, cand, positive), len(cand), k))
    if not rows:
        raise ValueError("no evaluable users")
    m = np.mean(rows, axis=0)
    return RankingReport(*map(float, m), k=k, candidates=candidates)


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------


def stratified_split(labels: np.ndarray, test_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; every class with >= 2 members lands in both parts."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = int(round(test_fraction * len(idx)))
        if len(idx) >= 2:
            n_test = min(max(n_test, 1), len(idx) - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def softmax_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean cross-entropy of ``softmax(X theta)`` plus ``l2/2 ||theta||^2``."""
    logp = log_softmax(X @ theta, axis=1)
    return float(-logp[np.arange(len(y)), y].mean() + 0.5 * l2 * np.sum(theta**2))


def softmax_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    P = softmax(X @ theta, axis=1)
    P[np.arange(len(y)), y] -= 1.0
    return X.T @ P / len(y) + l2 * theta


@dataclass
class SoftmaxModel:
    theta: np.ndarray
    classes: np.ndarray
    loss_trace: list[float]
    bias: bool = True

    def _design(self, X):
        X = np.asarray(X, dtype=float)
        return np.hstack([X, np.ones((len(X), 1))]) if self.bias else X

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self._design(X) @ self.theta, axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]


def train_softmax_classifier(
    X: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-4,
    epochs: int = 300,
    lr: float = 1.0,
    seed: int = 0,
    bias: bool = True,
) -> SoftmaxModel:
    """Full-batch gradient descent with backtracking on cross-entropy plus L2.

    Features are used as given plus an optional bias column. The seed only
    affects the (tiny) random initialization, so runs are deterministic.
    """
    classes, y = np.unique(np.asarray(labels), return_inverse=True)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    X = np.asarray(X, dtype=float)
    if bias:
        X = np.hstack([X, np.ones((len(X), 1))])
    rng = np.random.default_rng(seed)
    theta = 1e-6 * rng.standard_normal((X.shape[1], len(classes)))
    trace = [softmax_loss(theta, X, y, l2)]
    step = lr
    for _ in range(epochs):
        g = softmax_gradient(theta, X, y, l2)
        while True:
            trial = theta - step * g
            value = softmax_loss(trial, X, y, l2)
            if value <= trace[-1] or step < 1e-12:
                break
            step *= 0.5
        if not np.isfinite(value):
            raise FloatingPointError("softmax training diverged")
        theta = trial
        trace.append(value)
        step *= 1.25
    return SoftmaxModel(theta, classes, trace, bias)


def f1_scores(predictions, labels) -> tuple[float, float]:
    """Micro and macro F1; a class with no predicted or true members scores 0."""
    pred = np.asarray(predictions)
    true = np.asarray(labels)
    if pred.shape != true.shape:
        raise ValueError("predictions and labels differ in length")
    classes = np.unique(np.concatenate([pred, true]))
    tp = np.array([np.sum((pred == c) & (true == c)) for c in classes], dtype=float)
    fp = np.array([np.sum((pred == c) & (true != c)) for c in classes], dtype=float)
    fn = np.array([np.sum((pred != c) & (true == c)) for c in classes], dtype=float)
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    micro_denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / micro_denom if micro_denom else 0.0
    return float(micro), float(per_class.mean())


@dataclass
class ClassificationReport:
    micro_f1: float
    macro_f1: float
    std: dict = field(default_factory=dict)
    repetitions: int = 1

    def to_json(self) -> dict:
        return {"micro_f1": self.micro_f1, "macro_f1": self.macro_f1, "std": self.std, "repetitions": self.repetitions}


def evaluate_classification(
    X: np.ndarray, labels: np.ndarray, seed: int = 0, l2: float = 1e-4, epochs: int = 300, standardize: bool = True
) -> ClassificationReport:
    """Stratified 80/20 split, softmax regression, F1 on the held-out part."""
    X = np.asarray(X, dtype=float)
    tr, te = stratified_split(labels, 0.2, seed)
    if standardize:
        mu, sd = X[tr].mean(axis=0), X[tr].std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd
    model = train_softmax_classifier(X[tr], labels[tr], l2=l2, epochs=epochs, seed=seed)
    return ClassificationReport(*f1_scores(model.predict(X[te]), np.asarray(labels)[te]))


def repeat(fn: Callable[[int], object], repetitions: int = 10, seed: int = 0):
    """Run ``fn(seed_r)`` for ``repetitions`` seeds and average every numeric field.

    Returns a report of the same type with means and a ``std`` dict.
    """
    seeds = np.random.SeedSequence(seed).generate_state(repetitions)
    reports = [fn(int(s)) for s in seeds]
    first = reports[0]
    names = [k for k, v in first.to_json().items() if isinstance(v, float)]
    values = {k: np.array([getattr(r, k) for r in reports]) for k in names}
    for k in names:
        setattr(first, k, float(values[k].mean()))
    first.std = {k: float(values[k].std(ddof=1)) if repetitions > 1 else 0.0 for k in names}
    first.repetitions = repetitions
    return first


def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    """``0.954(.005)`` style."""
    s = f"{std:.{digits}f}"
    if s.startswith("0"):
        s = s[1:]
    return f"{mean:.{digits}f}({s})"


# --------------------------------------------------------------------------
# Cart strategies
# --------------------------------------------------------------------------

STRATEGIES = ("random", "recent", "oracle", "add", "attention")


@dataclass
class CartSnapshot:
    items: np.ndarray
    label: int

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        if len(self.items) == 0:
            raise ValueError("cart is empty")
        if self.label in set(self.items.tolist()):
            raise ValueError("label is already in the cart")


def attention_weights(E: np.ndarray) -> np.ndarray:
    """``softmax_m(sum_m' <z_m, z_m'> / sqrt(d))``."""
    return softmax((E @ E.T).sum(axis=1) / np.sqrt(E.shape[1]))


def cart_embedding(
    cart: CartSnapshot,
    pair: EmbeddingPair | np.ndarray,
    strategy: str,
    rng: np.random.Generator | None = None,
    which: str = "Z",
    candidate_side: str | None = None,
    normalize: bool = False,
) -> np.ndarray:
    """Compose cart item embeddings into one query vector.

    ``oracle`` needs the label; it scores candidates on ``candidate_side``
    (defaults to ``which``). ``normalize`` rescales cart item embeddings to
    unit length before composing them.
    """
    M = pair.export(which) if isinstance(pair, EmbeddingPair) else np.asarray(pair, dtype=float)
    E = M[cart.items]
    if normalize:
        E = E / np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)
    if strategy == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        return E[rng.integers(len(E))]
    if strategy == "recent":
        return E[-1]
    if strategy == "oracle":
        C = M if candidate_side is None or not isinstance(pair, EmbeddingPair) else pair.export(candidate_side)
        best, best_pos = 0, np.inf
        for m in range(len(E)):
            order = rank_candidates(E[m], C, exclude=cart.items)  # noqa: B023
            pos = int(np.flatnonzero(order == cart.label)[0])
            if pos < best_pos:
                best, best_pos = m, pos
        return E[best]
    if strategy == "add":
        return E.sum(axis=0)
    if strategy == "attention":
        return attention_weights(E) @ E
    raise ValueError(f"unknown strategy {strategy!r}")


def evaluate_carts(
    carts: Sequence[CartSnapshot],
    pair: EmbeddingPair | np.ndarray,
    strategy: str,
    k: int = 10,
    seed: int = 0,
    which: str = "Z",
    candidate_side: str | None = None,
    normalize: bool = False,
) -> RankingReport:
    """Rank each cart's label over the catalog minus the cart.

    Cart items are read from ``which``; candidates are scored against
    ``candidate_side`` (same matrix by default).
    """
    M = pair.export(which) if isinstance(pair, EmbeddingPair) else np.asarray(pair, dtype=float)
    C = M if candidate_side is None or not isinstance(pair, EmbeddingPair) else pair.export(candidate_side)
    rng = np.random.default_rng(seed)
    rows = []
    for cart in carts:
        q = cart_embedding(cart, pair, strategy, rng, which, candidate_side, normalize)
        scores = C @ q
        allowed = np.ones(M.shape[0], dtype=bool)
        allowed[cart.items] = False
        cand = np.flatnonzero(allowed)
        rows.append(ranking_metrics(_positive_position(scores, cand, cart.label), len(cand), k))
    m = np.mean(rows, axis=0)
    return RankingReport(*map(float, m), k=k, candidates="catalog-minus-cart")


def planted_carts(
    base: np.ndarray,
    style: np.ndarray,
    num_carts: int,
    seed: int = 0,
    per_factor: int = 2,
    num_impulse: int = 1,
) -> list[CartSnapshot]:
    """Carts whose next item is pinned down only by combining cart items.

    For a label item ``(b, v)`` the cart holds ``per_factor`` items sharing
    its base (other styles), ``per_factor`` sharing its style (other bases)
    and ``num_impulse`` unrelated impulse items. Impulse items are never
    added last.
    """
    rng = np.random.default_rng(seed)
    n = len(base)
    carts = []
    while len(carts) < num_carts:
        label = int(rng.integers(n))
        b, v = base[label], style[label]
        same_base = np.flatnonzero((base == b) & (style != v))
        same_style = np.flatnonzero((style == v) & (base != b))
        unrelated = np.flatnonzero((base != b) & (style != v))
        if len(same_base) < per_factor or len(same_style) < per_factor or len(unrelated) < num_impulse:
            continue
        informative = np.concatenate(
            [rng.choice(same_base, per_factor, replace=False), rng.choice(same_style, per_factor, replace=False)]
        )
        informative = rng.permutation(informative)
        items = informative
        for impulse in rng.choice(unrelated, num_impulse, replace=False):
            items = np.insert(items, int(rng.integers(len(items))), impulse)
        carts.append(CartSnapshot(items, label))
    return carts


def carts_to_log(carts: Sequence[CartSnapshot], num_items: int) -> InteractionLog:
    """Cart plus label as one ordered session per cart (training data for embeddings)."""
    items = [np.append(c.items, c.label) for c in carts]
    user = np.repeat(np.arange(len(items)), [len(x) for x in items])
    position = np.concatenate([np.arange(len(x)) for x in items])
    return InteractionLog(user, user, np.concatenate(items), position, num_items)
