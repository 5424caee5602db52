"""Singular bases, the alignment score and the linear-downstream generalization simulation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .cooccur import RelatednessEstimate

DENSE_LIMIT = 2000
POWER_ITERATIONS = 20
OVERSAMPLING = 8


@dataclass
class SpectralBasis:
    U: np.ndarray
    singular_values: np.ndarray
    source: str = "Z"

    @property
    def rank(self) -> int:
        return self.U.shape[1]


def relatedness_matrix(est: RelatednessEstimate, clip_negative: bool = True) -> np.ndarray:
    """Dense relatedness with missing entries as 0 and (by default) negatives clipped."""
    X = est.to_dense(0.0)
    return np.maximum(X, 0.0) if clip_negative else X


def _randomized_range(M: np.ndarray, r: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((M.shape[1], min(r + OVERSAMPLING, min(M.shape))))
    Q, _ = np.linalg.qr(M @ Q)
    for _ in range(POWER_ITERATIONS):
        Q, _ = np.linalg.qr(M.T @ Q)
        Q, _ = np.linalg.qr(M @ Q)
    return Q


def left_singular_basis(M, r: int | None = None, source: str = "Z", method: str = "auto", seed: int = 0) -> SpectralBasis:
    """Top-``r`` left singular vectors of ``M``.

    Dense SVD up to 2000 rows, otherwise a randomized range finder with 20
    power iterations and oversampling 8. ``method`` forces either path.
    """
    if isinstance(M, RelatednessEstimate):
        M = relatedness_matrix(M)
    M = np.asarray(M, dtype=float)
    r = min(M.shape) if r is None else r
    if r < 1 or r > min(M.shape):
        raise ValueError(f"rank {r} outside [1, {min(M.shape)}]")
    if method == "auto":
        method = "dense" if M.shape[0] <= DENSE_LIMIT else "randomized"
    if method == "dense":
        U, s, _ = np.linalg.svd(M, full_matrices=False)
    elif method == "randomized":
        Q = _randomized_range(M, r, seed)
        Ub, s, _ = np.linalg.svd(Q.T @ M, full_matrices=False)
        U = Q @ Ub
    else:
        raise ValueError(f"unknown method {method!r}")
    return SpectralBasis(U[:, :r], s[:r], source)


def alignment_score(basis_Z: SpectralBasis, basis_X: SpectralBasis) -> float:
    """``||U_X^T U_Z||_F^2``, between 0 and the smaller rank."""
    if basis_Z.U.shape[0] != basis_X.U.shape[0]:
        raise ValueError("bases have different row counts")
    return float(np.sum((basis_X.U.T @ basis_Z.U) ** 2))


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Principal angles (radians) between the column spans of two orthonormal matrices."""
    s = np.linalg.svd(A.T @ B, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


# --------------------------------------------------------------------------
# Generalization simulation
# --------------------------------------------------------------------------

CLAMP = 10.0


def soft_logistic_loss(f, y):
    """Cross-entropy of ``sigmoid(f)`` against the soft label ``sigmoid(y)``.

    ``f`` is clamped to ``[-10, 10]`` so the loss is 2.5-Lipschitz in ``y``
    and 1-Lipschitz in ``f``.
    """
    f = np.clip(f, -CLAMP, CLAMP)
    s = expit(y)
    return -(s * log_expit(f) + (1 - s) * log_expit(-f))


LIPSCHITZ = 0.25 * CLAMP


@dataclass
class GeneralizationSim:
    theta_covariance: np.ndarray
    noise_sigma: float = 0.1
    lipschitz: float = LIPSCHITZ
    trials: int = 200
    seed: int = 0

    def __post_init__(self):
        S = np.asarray(self.theta_covariance, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
            raise ValueError("theta covariance must be a symmetric matrix")
        eig = np.linalg.eigvalsh(S)
        if eig.min() < -1e-12:
            raise ValueError("theta covariance must be positive semidefinite")
        if eig.max() > 1 + 1e-12:
            raise ValueError("theta covariance must have spectral norm <= 1")
        if self.noise_sigma < 0 or self.trials < 1:
            raise ValueError("invalid simulation settings")
        self.theta_covariance = S


def generalization_bound(trace: float, lambda_min: float, score: float, num_items: int, lipschitz: float, sigma: float) -> float:
    """``L sqrt((tr - lambda_min S) / |I|) + 2 L sigma``."""
    return float(lipschitz * np.sqrt(max(trace - lambda_min * score, 0.0) / num_items) + 2 * lipschitz * sigma)


def fit_soft_logistic(F: np.ndarray, y: np.ndarray, iterations: int = 50, ridge: float = 0.0) -> np.ndarray:
    """Minimize ``sum soft_logistic_loss(F theta, y)`` (unclamped) by Newton steps.

    Starts from least squares; a singular Hessian gets a ``1e-8`` ridge.
    """
    theta = _lstsq(F, y)
    target = expit(y)
    p = F.shape[1]
    for _ in range(iterations):
        f = F @ theta
        q = expit(f)
        g = F.T @ (q - target) + ridge * theta
        H = (F * (q * (1 - q))[:, None]).T @ F + ridge * np.eye(p)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            warnings.warn("singular normal equations; adding ridge jitter 1e-8", RuntimeWarning)
            step = np.linalg.solve(H + 1e-8 * np.eye(p), g)
        theta = theta - step
        if np.max(np.abs(step)) < 1e-10:
            break
    return theta


def _lstsq(F, y):
    G = F.T @ F
    try:
        return np.linalg.solve(G, F.T @ y)
    except np.linalg.LinAlgError:
        warnings.warn("singular normal equations; adding ridge jitter 1e-8", RuntimeWarning)
        return np.linalg.solve(G + 1e-8 * np.eye(G.shape[0]), F.T @ y)


@dataclass
class GeneralizationReport:
    avg_gap: float
    gap_se: float
    bound_value: float
    alignment: float
    trials: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "avg_gap": self.avg_gap,
            "gap_se": self.gap_se,
            "bound_value": self.bound_value,
            "alignment": self.alignment,
            "trials": self.trials,
        }


def simulate_generalization(X: np.ndarray, Z: np.ndarray, sim: GeneralizationSim, rank: int | None = None) -> GeneralizationReport:
    """Monte-Carlo estimate of the excess downstream loss of ``Z`` over ``X``.

    Labels are ``y0 = U(X) theta`` with ``theta ~ N(0, Sigma)`` and observed
    ``y = y0 + eps``. Both feature sets get a linear fit of the soft logistic
    loss on ``y`` and are scored against ``y0``.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.shape[0] != Z.shape[0]:
        raise ValueError("X and Z must have the same row count")
    Sigma = sim.theta_covariance
    r = Sigma.shape[0] if rank is None else rank
    if r != Sigma.shape[0]:
        raise ValueError("theta covariance does not match the rank of U(X)")
    bx = left_singular_basis(X, r, "X")
    bz = left_singular_basis(Z, min(Z.shape), "Z")
    score = alignment_score(bz, bx)
    m = X.shape[0]
    eig = np.linalg.eigvalsh(Sigma)
    bound = generalization_bound(float(np.trace(Sigma)), float(eig.min()), score, m, sim.lipschitz, sim.noise_sigma)
    chol = np.linalg.cholesky(Sigma + 1e-15 * np.eye(r))
    seeds = np.random.SeedSequence(sim.seed).spawn(sim.trials)
    records = []
    for t, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        theta = chol @ rng.standard_normal(r)
        y0 = bx.U @ theta
        y = y0 + sim.noise_sigma * rng.standard_normal(m)
        y1 = X @ fit_soft_logistic(X, y)
        y2 = Z @ fit_soft_logistic(Z, y)
        loss_x = float(np.mean(soft_logistic_loss(y1, y0)))
        loss_z = float(np.mean(soft_logistic_loss(y2, y0)))
        records.append({"trial": t, "loss_X": loss_x, "loss_Z": loss_z, "gap": loss_z - loss_x})
    gaps = np.array([rec["gap"] for rec in records])
    se = float(gaps.std(ddof=1) / np.sqrt(len(gaps))) if len(gaps) > 1 else 0.0
    return GeneralizationReport(float(gaps.mean()), se, bound, score, records)


def aligned_family(U_X: np.ndarray, d: int, shared: int, seed: int = 0) -> np.ndarray:
    """Orthonormal ``|I| x d`` matrix sharing ``shared`` directions with ``U_X``.

    The remaining columns are drawn orthogonal to ``U_X``, so the alignment
    score with ``U_X`` is exactly ``shared``.
    """
    m, r = U_X.shape
    if shared > min(d, r) or d - shared > m - r:
        raise ValueError("cannot build the requested family")
    rng = np.random.default_rng(seed)
    R, _ = np.linalg.qr(rng.standard_normal((r, r)))
    inside = U_X @ R[:, :shared]
    G = rng.standard_normal((m, d - shared))
    G -= U_X @ (U_X.T @ G)
    outside, _ = np.linalg.qr(G)
    return np.hstack([inside, outside])
