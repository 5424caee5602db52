"""SGNS product embeddings and the weighted least-squares baseline.

Sign convention: every loss here is minimized. The SGNS corpus loss is

    sum_ij N_ij softplus(-x_ij) + (k/n) N_i M_j softplus(x_ij),   x = Z Zt^T

whose unconstrained minimizer is ``x_ij = R_ij - log k``. Its gradient in
``z_i`` is ``n * Zt^T diag(w_i) (sigma(x_i) - sigma(R_i - log k))`` with
``w_ij = P_ij + k P_i Q_j``; the least-squares baseline replaces the error
term with ``-(R_i - x_i)`` (times 2).
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit

from .catalog import PairStream
from .cooccur import CooccurrenceTable, RelatednessEstimate, accumulate, relatedness

_logger = logging.getLogger(__name__)


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class EmbeddingPair:
    Z: np.ndarray
    Zt: np.ndarray

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        self.Zt = np.asarray(self.Zt, dtype=float)
        if self.Z.shape != self.Zt.shape or self.Z.ndim != 2 or self.Z.shape[1] < 1:
            raise ValueError("Z and Zt must be matching |I| x d matrices")

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    @property
    def num_items(self) -> int:
        return self.Z.shape[0]

    def scores(self) -> np.ndarray:
        return self.Z @ self.Zt.T

    def export(self, which: str = "Z") -> np.ndarray:
        if which == "Z":
            return self.Z
        if which == "Zt":
            return self.Zt
        if which == "mean":
            return 0.5 * (self.Z + self.Zt)
        raise ValueError(f"unknown export {which!r}")

    def copy(self) -> "EmbeddingPair":
        return EmbeddingPair(self.Z.copy(), self.Zt.copy())


def init_embeddings(vocab_size: int, d: int, seed: int = 0) -> EmbeddingPair:
    """Both matrices i.i.d. uniform on ``(-0.5/d, 0.5/d)`` from separate streams."""
    if d < 1:
        raise ValueError("d must be >= 1")
    s_z, s_zt = np.random.SeedSequence(seed).spawn(2)
    half = 0.5 / d
    Z = np.random.default_rng(s_z).uniform(-half, half, size=(vocab_size, d))
    Zt = np.random.default_rng(s_zt).uniform(-half, half, size=(vocab_size, d))
    return EmbeddingPair(Z, Zt)


def pair_loss(z_i, zt_j, zt_negatives) -> float:
    """Sampled SGNS loss of one positive pair and its negatives.

    ``zt_negatives`` is a ``(k, d)`` array; ``k`` is its row count.
    """
    z_i = np.asarray(z_i, dtype=float)
    negs = np.atleast_2d(np.asarray(zt_negatives, dtype=float))
    pos = -log_expit(z_i @ np.asarray(zt_j, dtype=float))
    neg = -log_expit(-(negs @ z_i)).sum()
    return float(pos + neg)


def zero_regularizer(pair: EmbeddingPair) -> tuple[float, np.ndarray, np.ndarray]:
    """The only shipped regularizer: value and gradients are zero."""
    return 0.0, np.zeros_like(pair.Z), np.zeros_like(pair.Zt)


def _dense_counts(table: CooccurrenceTable) -> np.ndarray:
    return table.pair_counts.toarray().astype(float)


def corpus_loss(pair: EmbeddingPair, table: CooccurrenceTable, k: float) -> float:
    """Expectation-form SGNS loss over all item pairs."""
    x = pair.scores()
    neg_w = (k / table.n) * np.outer(table.item_counts, table.context_counts).astype(float)
    return float(np.sum(_dense_counts(table) * softplus(-x)) + np.sum(neg_w * softplus(x)))


def shifted_target(table: CooccurrenceTable, k: float) -> np.ndarray:
    """Dense ``R - log k`` with ``-inf`` where the pair was never observed."""
    est = relatedness(table)
    out = np.full((table.num_items, table.num_items), -np.inf)
    out[est.rows, est.cols] = est.values - np.log(k)
    return out


def optimal_corpus_loss(table: CooccurrenceTable, k: float) -> float:
    """Infimum of :func:`corpus_loss` over unconstrained inner products.

    Observed pairs sit at ``R - log k``; unobserved pairs contribute nothing
    in the limit ``x -> -inf``.
    """
    rows, cols, counts = table.coo()
    est = relatedness(table)
    xs = est.values - np.log(k)
    neg_w = (k / table.n) * table.item_counts[rows].astype(float) * table.context_counts[cols]
    return float(np.sum(counts * softplus(-xs)) + np.sum(neg_w * softplus(xs)))


def factorization_weights_dense(table: CooccurrenceTable, k: float) -> np.ndarray:
    """``w_ij = P_ij + k P_i Q_j`` on every pair."""
    n = float(table.n)
    return _dense_counts(table) / n + k * np.outer(table.item_counts / n, table.context_counts / n)


def weighted_error_gradient(Zt: np.ndarray, weights: np.ndarray, error: np.ndarray) -> np.ndarray:
    """``Zt^T diag(weights) error``: the shared shape of both gradients."""
    return Zt.T @ (np.asarray(weights) * np.asarray(error))


def sgns_gradient_row(pair: EmbeddingPair, i: int, table: CooccurrenceTable, k: float) -> np.ndarray:
    """Analytic gradient of :func:`corpus_loss` with respect to ``z_i``."""
    w = factorization_weights_dense(table, k)[i]
    target = expit(shifted_target(table, k)[i])
    err = expit(pair.Zt @ pair.Z[i]) - target
    return table.n * weighted_error_gradient(pair.Zt, w, err)


def sgns_gradients(pair: EmbeddingPair, table: CooccurrenceTable, k: float) -> tuple[np.ndarray, np.ndarray]:
    """Full analytic gradients of :func:`corpus_loss` for ``Z`` and ``Zt``."""
    w = factorization_weights_dense(table, k)
    err = table.n * w * (expit(pair.scores()) - expit(shifted_target(table, k)))
    return err @ pair.Zt, err.T @ pair.Z


def kl_sdr_gap(pair: EmbeddingPair, table: CooccurrenceTable, k: float) -> float:
    """Expected Bernoulli KL between relatedness- and embedding-induced co-occurrence.

    With ``beta = 1/(k+1)`` the pair ``(i, j)`` carries mass
    ``beta P_ij + (1-beta) P_i Q_j`` and the co-occurrence indicator has
    probability ``sigma(R_ij - log k)`` under the relatedness and
    ``sigma(x_ij)`` under the embeddings. The result equals
    ``(corpus_loss - optimal_corpus_loss) / (n (k+1))``.
    """
    n = float(table.n)
    beta = 1.0 / (k + 1.0)
    mass = beta * _dense_counts(table) / n + (1 - beta) * np.outer(table.item_counts / n, table.context_counts / n)
    a = shifted_target(table, k)
    x = pair.scores()
    p1 = expit(a)
    with np.errstate(invalid="ignore"):
        on = np.where(p1 > 0, p1 * (log_expit(a) - log_expit(x)), 0.0)
    off = (1 - p1) * (log_expit(-a) - log_expit(-x))
    return float(np.sum(mass * (on + off)))


@dataclass
class SgnsConfig:
    d: int = 32
    k: int = 5
    epochs: int = 5
    lr: float = 0.025
    lr_floor: float = 1e-4
    power: float = 1.0
    seed: int = 0
    batch_size: int = 256
    workers: int = 1
    regularizer: Callable | None = None

    def validate(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 <= self.power <= 1:
            raise ValueError("negative-sampling power must lie in [0, 1]")
        if self.d < 1 or self.epochs < 0 or self.batch_size < 1 or self.workers < 1:
            raise ValueError("invalid SGNS configuration")


@dataclass
class TrainResult:
    pair: EmbeddingPair
    loss_trace: list[float] = field(default_factory=list)


def _expand_positives(table: CooccurrenceTable) -> tuple[np.ndarray, np.ndarray]:
    rows, cols, counts = table.coo()
    return np.repeat(rows, counts), np.repeat(cols, counts)


def train_sgns(
    data: CooccurrenceTable | PairStream,
    config: SgnsConfig,
    num_items: int | None = None,
    init: EmbeddingPair | None = None,
) -> TrainResult:
    """Minibatch SGD on the sampled SGNS objective.

    Positives are the oriented observations recorded in the table (so
    filtered pairs are excluded). Each positive draws ``k`` negatives from
    the context marginal raised to ``config.power``. The learning rate decays
    linearly to ``lr * lr_floor`` across all presentations. ``workers > 1``
    runs lock-free threads over disjoint batches and is not reproducible.
    """
    config.validate()
    table = data if isinstance(data, CooccurrenceTable) else accumulate(data, num_items)
    if table.n == 0:
        raise ValueError("cannot train on an empty table")
    rng = np.random.default_rng(config.seed)
    pair = init.copy() if init is not None else init_embeddings(table.num_items, config.d, config.seed)
    centers, contexts = _expand_positives(table)
    noise = table.context_counts.astype(float) ** config.power
    noise_cdf = np.cumsum(noise / noise.sum())
    total_batches = config.epochs * int(np.ceil(len(centers) / config.batch_size))
    trace: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(centers))
        starts = np.arange(0, len(order), config.batch_size)
        negs_all = np.searchsorted(noise_cdf, rng.random((len(order), config.k)) * noise_cdf[-1], side="right")
        negs_all = np.minimum(negs_all, table.num_items - 1)
        lrs = config.lr * (1 - (1 - config.lr_floor) * (step + np.arange(len(starts))) / max(total_batches, 1))
        step += len(starts)
        losses = np.zeros(len(starts))

        def run(batch_ids):
            for b in batch_ids:
                span = slice(starts[b], starts[b] + config.batch_size)
                sel = order[span]
                losses[b] = _sgd_step(pair, centers[sel], contexts[sel], negs_all[span], lrs[b], config)

        batches = starts
        if config.workers == 1:
            run(range(len(batches)))
        else:
            chunks = np.array_split(np.arange(len(batches)), config.workers)
            threads = [threading.Thread(target=run, args=(c,)) for c in chunks]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        epoch_loss = float(losses.sum() / len(centers))
        if not np.isfinite(epoch_loss) or not (np.isfinite(pair.Z).all() and np.isfinite(pair.Zt).all()):
            raise FloatingPointError(f"non-finite values in epoch {epoch}; learning rate too large")
        trace.append(epoch_loss)
        _logger.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return TrainResult(pair, trace)


def _sgd_step(pair, c, o, negs, lr, config) -> float:
    Z, Zt = pair.Z, pair.Zt
    zc, zo, zn = Z[c], Zt[o], Zt[negs]
    xp = np.einsum("bd,bd->b", zc, zo)
    xn = np.einsum("bd,bkd->bk", zc, zn)
    loss = float(np.sum(softplus(-xp)) + np.sum(softplus(xn)))
    gp = expit(xp) - 1.0
    gn = expit(xn)
    grad_c = gp[:, None] * zo + np.einsum("bk,bkd->bd", gn, zn)
    grad_o = gp[:, None] * zc
    grad_n = gn[:, :, None] * zc[:, None, :]
    if lr == 0:
        return loss
    np.add.at(Z, c, -lr * grad_c)
    np.add.at(Zt, o, -lr * grad_o)
    np.add.at(Zt, negs.ravel(), -lr * grad_n.reshape(-1, Z.shape[1]))
    if config.regularizer is not None:
        _, gz, gzt = config.regularizer(pair)
        Z -= lr * gz
        Zt -= lr * gzt
    return loss


def sampled_loss_estimate(
    pair: EmbeddingPair, table: CooccurrenceTable, k: int, num_samples: int, seed: int = 0
) -> tuple[float, float]:
    """Monte-Carlo estimate of :func:`corpus_loss` from sampled positives and negatives.

    Returns the estimate and its standard error.
    """
    rng = np.random.default_rng(seed)
    centers, contexts = _expand_positives(table)
    pick = rng.integers(0, len(centers), size=num_samples)
    c, o = centers[pick], contexts[pick]
    q = table.context_counts / table.n
    negs = rng.choice(table.num_items, size=(num_samples, k), p=q)
    xp = np.einsum("bd,bd->b", pair.Z[c], pair.Zt[o])
    xn = np.einsum("bd,bkd->bk", pair.Z[c], pair.Zt[negs])
    per = table.n * (softplus(-xp) + softplus(xn).sum(axis=1))
    return float(per.mean()), float(per.std(ddof=1) / np.sqrt(num_samples))


# --------------------------------------------------------------------------
# Least-squares linear dimension reduction
# --------------------------------------------------------------------------


@dataclass
class FactorizationWeights:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    num_items: int

    def __post_init__(self):
        if np.any(self.values <= 0):
            raise ValueError("factorization weights must be positive on the support")


def factorization_weights(table: CooccurrenceTable, k: float) -> FactorizationWeights:
    """``w_ij = P_ij + k P_i Q_j`` on the observed pairs, aligned with :func:`relatedness`."""
    rows, cols, counts = table.coo()
    n = float(table.n)
    w = counts / n + k * (table.item_counts[rows] / n) * (table.context_counts[cols] / n)
    return FactorizationWeights(rows, cols, w, table.num_items)


def ldr_loss(pair: EmbeddingPair, est: RelatednessEstimate, weights: FactorizationWeights, ridge: float = 0.0) -> float:
    """``sum w_ij (R_ij - z_i . zt_j)^2`` over stored pairs plus an optional ridge."""
    x = np.einsum("bd,bd->b", pair.Z[est.rows], pair.Zt[est.cols])
    value = float(np.sum(weights.values * (est.values - x) ** 2))
    if ridge:
        value += ridge * float(np.sum(pair.Z**2) + np.sum(pair.Zt**2))
    return value


def ldr_gradients(pair: EmbeddingPair, est: RelatednessEstimate, weights: FactorizationWeights):
    """Gradients of :func:`ldr_loss` (no ridge) for ``Z`` and ``Zt``."""
    x = np.einsum("bd,bd->b", pair.Z[est.rows], pair.Zt[est.cols])
    r = -2.0 * weights.values * (est.values - x)
    E = sp.csr_matrix((r, (est.rows, est.cols)), shape=(est.num_items, est.num_items))
    return E @ pair.Zt, E.T @ pair.Z


def ldr_gradient_row(pair: EmbeddingPair, i: int, est: RelatednessEstimate, weights: FactorizationWeights) -> np.ndarray:
    """``-2 Zt^T diag(w_i) (R_i - x_i)`` restricted to row ``i``'s stored pairs."""
    sel = est.rows == i
    cols = est.cols[sel]
    err = est.values[sel] - pair.Zt[cols] @ pair.Z[i]
    return -2.0 * weighted_error_gradient(pair.Zt[cols], weights.values[sel], err)


@dataclass
class LdrResult:
    pair: EmbeddingPair
    objective_trace: list[float] = field(default_factory=list)


def train_ldr(
    est: RelatednessEstimate,
    weights: FactorizationWeights,
    d: int,
    iterations: int = 200,
    seed: int = 0,
    method: str = "gd",
    ridge: float = 1e-8,
    lr: float | None = None,
) -> LdrResult:
    """Weighted least-squares factorization ``R ~ Z Zt^T`` on stored pairs.

    ``method="gd"`` (default) runs gradient descent with backtracking.
    ``method="als"`` alternates exact ridge-regularized row solves, so the
    regularized objective never increases.
    """
    if not (np.array_equal(est.rows, weights.rows) and np.array_equal(est.cols, weights.cols)):
        raise ValueError("weights are not aligned with the relatedness estimate")
    pair = init_embeddings(est.num_items, d, seed)
    trace = [ldr_loss(pair, est, weights, ridge)]
    if method == "als":
        by_row = _group(est.rows, est.num_items)
        by_col = _group(est.cols, est.num_items)
        for _ in range(iterations):
            _als_half(pair.Z, pair.Zt, by_row, est.cols, est.values, weights.values, ridge)
            _als_half(pair.Zt, pair.Z, by_col, est.rows, est.values, weights.values, ridge)
            trace.append(ldr_loss(pair, est, weights, ridge))
            _check_finite(pair, trace[-1])
    elif method == "gd":
        step = lr if lr is not None else 1.0
        for _ in range(iterations):
            gZ, gZt = ldr_gradients(pair, est, weights)
            gZ += 2 * ridge * pair.Z
            gZt += 2 * ridge * pair.Zt
            while True:
                trial = EmbeddingPair(pair.Z - step * gZ, pair.Zt - step * gZt)
                value = ldr_loss(trial, est, weights, ridge)
                if value <= trace[-1] or step < 1e-20:
                    break
                step *= 0.5
            pair = trial
            trace.append(value)
            _check_finite(pair, value)
            step *= 1.5
    else:
        raise ValueError(f"unknown method {method!r}")
    return LdrResult(pair, trace)


def _check_finite(pair, value):
    if not np.isfinite(value) or not np.isfinite(pair.Z).all():
        raise FloatingPointError("least-squares factorization diverged")


def _group(keys: np.ndarray, size: int) -> list[np.ndarray]:
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(size + 1))
    return [order[bounds[i] : bounds[i + 1]] for i in range(size)]


def _als_half(this, other, groups, other_idx, values, w, ridge):
    d = this.shape[1]
    eye = ridge * np.eye(d)
    for i, g in enumerate(groups):
        if len(g) == 0:
            this[i] = 0.0
            continue
        M = other[other_idx[g]]
        wg = w[g]
        A = (M * wg[:, None]).T @ M + eye
        b = M.T @ (wg * values[g])
        this[i] = np.linalg.solve(A, b)
