"""Finite-sample confidence for relatedness and false-association filtering.

The pair indicator ``1[(i, j) observed]`` is treated as a Bernoulli draw with
mean ``N_i M_j / n^2`` under independence. A Cramer-Chernoff argument bounds
the chance that relatedness falls below ``-eps``, and inverting the Bernoulli
KL divergence gives confidence endpoints for the pair probability.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import xlogy

from .cooccur import CooccurrenceTable

BISECTION_TOL = 1e-12
BISECTION_MAX_ITER = 200


def bernoulli_kl(a, b):
    """KL divergence between Bernoulli(a) and Bernoulli(b).

    ``0 log 0`` is taken as 0. Returns ``inf`` when ``b`` sits on {0, 1}
    and ``a`` differs from it.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any((a < 0) | (a > 1)) or np.any((b < 0) | (b > 1)):
        raise ValueError("arguments must be probabilities")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = xlogy(a, a) - xlogy(a, b) + xlogy(1 - a, 1 - a) - xlogy(1 - a, 1 - b)
    out = np.where(a == b, 0.0, out)
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def null_mean(table: CooccurrenceTable, i: int, j: int, slack: float = 1.0) -> float:
    """Plug-in mean ``N_i M_j / n^2`` of the pair indicator under independence.

    ``slack`` multiplies both marginals (sensitivity knob).
    """
    return float(slack * table.item_counts[i] * slack * table.context_counts[j]) / float(table.n) ** 2


def chernoff_lower_tail(mu: float, n: int, eps) -> np.ndarray:
    """``exp(-n KL(mu e^{-eps} || mu))``: bound on ``P(R <= -eps)``."""
    eps = np.asarray(eps, dtype=float)
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    return np.exp(-n * bernoulli_kl(mu * np.exp(-eps), np.full_like(eps, mu)))


def tail_bound(table: CooccurrenceTable, i: int, j: int, epsilon: float, slack: float = 1.0) -> float:
    """Upper bound on ``P(R_ij <= -epsilon)`` with observed marginals plugged in."""
    if table.item_counts[i] <= 0 or table.context_counts[j] <= 0:
        raise ValueError("pair has a zero marginal")
    return float(chernoff_lower_tail(null_mean(table, i, j, slack), table.n, epsilon))


def invert_kl(mu_hat, t, direction: str = "upper"):
    """Endpoint of ``{p : KL(mu_hat || p) <= t}`` found by bisection.

    ``upper`` returns the largest such ``p`` (>= mu_hat), ``lower`` the
    smallest (<= mu_hat). Works elementwise on arrays.
    """
    if direction not in ("upper", "lower"):
        raise ValueError(f"unknown direction {direction!r}")
    mu = np.asarray(mu_hat, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), mu.shape)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    # feasible end stays inside the KL ball, infeasible end outside it
    feasible = mu.copy()
    infeasible = np.ones_like(mu) if direction == "upper" else np.zeros_like(mu)
    for _ in range(BISECTION_MAX_ITER):
        if np.all(np.abs(infeasible - feasible) <= BISECTION_TOL):
            break
        mid = 0.5 * (feasible + infeasible)
        inside = bernoulli_kl(mu, mid) <= t
        feasible = np.where(inside, mid, feasible)
        infeasible = np.where(inside, infeasible, mid)
    # the boundary point itself may be feasible (KL finite at 0 or 1)
    edge = infeasible
    feasible = np.where(bernoulli_kl(mu, edge) <= t, edge, feasible)
    return feasible if feasible.ndim else float(feasible)


def kl_radius(level: float, n: int, kind: str = "confidence") -> float:
    """KL radius ``t`` for a level.

    ``kind="significance"`` reads ``level`` as alpha: ``t = log(1/alpha)/n``.
    ``kind="confidence"`` reads it as c: ``t = log(1/(1-c))/n``.
    """
    if not 0 < level < 1 and not (kind == "significance" and level == 1):
        raise ValueError("level must lie in (0, 1)")
    if kind == "significance":
        return float(np.log(1.0 / level) / n)
    if kind == "confidence":
        return float(np.log(1.0 / (1.0 - level)) / n)
    raise ValueError(f"unknown level kind {kind!r}")


def _bound_from_p(p, ni, mj, n):
    with np.errstate(divide="ignore"):
        return np.log(float(n) ** 2 * p) - np.log(ni) - np.log(mj)


def bound_on_R(
    table: CooccurrenceTable,
    i: int,
    j: int,
    alpha: float,
    direction: str = "lower",
    slack: float = 1.0,
) -> float:
    """Confidence bound ``log(n^2 p_alpha / (N_i M_j))`` on the relatedness.

    ``alpha`` is a significance level (``alpha -> 1`` collapses to the
    point estimate). A lower bound of ``-inf`` means the pair should always
    be dropped.
    """
    ni, mj = table.item_counts[i] * slack, table.context_counts[j] * slack
    if ni <= 0 or mj <= 0:
        raise ValueError("pair has a zero marginal")
    mu_hat = table.count(i, j) / table.n
    p = invert_kl(mu_hat, kl_radius(alpha, table.n, "significance"), direction)
    return float(_bound_from_p(p, ni, mj, table.n))


@dataclass
class ConfidenceReport:
    i: int
    j: int
    mu_hat: float
    null_mean: float
    p_alpha_upper: float
    p_alpha_lower: float
    bound_on_R: float
    verdict: str

    def to_json(self) -> dict:
        d = asdict(self)
        if not np.isfinite(d["bound_on_R"]):
            d["bound_on_R"] = None if np.isnan(d["bound_on_R"]) else str(d["bound_on_R"])
        return d


def pair_confidence(
    table: CooccurrenceTable,
    level: float,
    kind: str = "confidence",
    inversion: str = "lower",
    slack: float = 1.0,
) -> dict[str, np.ndarray]:
    """Vectorized confidence quantities for every stored pair."""
    rows, cols, counts = table.coo()
    n = table.n
    t = kl_radius(level, n, kind)
    mu_hat = counts / n
    upper = invert_kl(mu_hat, t, "upper")
    lower = invert_kl(mu_hat, t, "lower")
    ni = table.item_counts[rows] * slack
    mj = table.context_counts[cols] * slack
    p = lower if inversion == "lower" else upper
    return {
        "rows": rows,
        "cols": cols,
        "mu_hat": mu_hat,
        "null_mean": ni * mj / float(n) ** 2,
        "upper": upper,
        "lower": lower,
        "bound": _bound_from_p(p, ni, mj, n),
    }


def filter_false_associations(
    table: CooccurrenceTable,
    alpha: float,
    kind: str = "confidence",
    inversion: str = "lower",
    slack: float = 1.0,
) -> tuple[CooccurrenceTable, list[ConfidenceReport]]:
    """Drop pairs whose relatedness bound is not positive.

    ``alpha`` is read as a confidence level by default, so a larger value
    widens the KL ball and drops more pairs. Marginals and ``n`` are
    recomputed from the surviving counts. Returns the cleaned table and a
    report for every dropped pair.
    """
    if table.n == 0:
        raise ValueError("cannot filter an empty table")
    q = pair_confidence(table, alpha, kind, inversion, slack)
    drop = q["bound"] <= 0
    keep = ~drop
    rows, cols, counts = table.coo()
    kept = sp.coo_matrix((counts[keep], (rows[keep], cols[keep])), shape=table.pair_counts.shape)
    reports = [
        ConfidenceReport(
            int(q["rows"][k]),
            int(q["cols"][k]),
            float(q["mu_hat"][k]),
            float(q["null_mean"][k]),
            float(q["upper"][k]),
            float(q["lower"][k]),
            float(q["bound"][k]),
            "drop",
        )
        for k in np.flatnonzero(drop)
    ]
    return CooccurrenceTable(kept.tocsr(), table.convention), reports
