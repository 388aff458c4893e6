"""Exact t-SNE for inspecting fused feature spaces.

This is the quadratic-cost variant: full pairwise affinities, per-point
bandwidths found by bisection on the Gaussian precision, a Student-t
low-dimensional kernel, and plain momentum gradient descent with an early
exaggeration phase. No tree approximations and no adaptive gain trickery,
so the result is reproducible from the seed alone and the KL divergence can
be audited directly. Intended for thousands of points, not millions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, NonFiniteGradient

MAX_POINTS = 10_000


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    learning_rate: float = 200.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch_iter: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 1.0:
            raise ValueError("perplexity must exceed 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.early_exaggeration < 1.0:
            raise ValueError("early_exaggeration must be >= 1")


def pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    """Dense matrix of squared Euclidean distances with an exactly zero diagonal."""
    X = np.asarray(X, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _row_affinity(d_row: np.ndarray, beta: float):
    """Gaussian affinities for one row at precision ``beta``, plus entropy in bits."""
    shifted = d_row - d_row.min()
    p = np.exp(-beta * shifted)
    total = p.sum()
    p /= total
    nonzero = p > 0
    entropy_bits = float(-(p[nonzero] * np.log2(p[nonzero])).sum())
    return p, entropy_bits


def _bisect_beta(d_row: np.ndarray, target_bits: float, tol: float = 1e-5,
                 max_iter: int = 50):
    """Find the precision whose row entropy matches the perplexity target."""
    beta, lo, hi = 1.0, None, None
    p, entropy = _row_affinity(d_row, beta)
    for _ in range(max_iter):
        diff = entropy - target_bits
        if abs(diff) <= tol:
            break
        if diff > 0:
            lo = beta
            beta = beta * 2.0 if hi is None else 0.5 * (beta + hi)
        else:
            hi = beta
            beta = beta / 2.0 if lo is None else 0.5 * (beta + lo)
        p, entropy = _row_affinity(d_row, beta)
    return p, beta


@dataclass(frozen=True)
class AffinityResult:
    """Symmetrized joint affinities plus the per-row bandwidths behind them."""

    P: np.ndarray
    sigmas: np.ndarray
    jittered_pairs: int


def _patched_sq_dists(X: np.ndarray) -> np.ndarray:
    """Squared distances where near-coincident pairs survive cancellation.

    The expansion form ||a||^2 + ||b||^2 - 2ab flushes distances below its
    f64 noise floor (~1e-16 of the squared norms) to zero, which would make
    a 1e-10 jitter invisible. Any off-diagonal zero is therefore recomputed
    with the direct difference formula, which is exact at that scale.
    """
    D = pairwise_sq_dists(X)
    zero_i, zero_j = np.nonzero((D == 0) & ~np.eye(X.shape[0], dtype=bool))
    for i, j in zip(zero_i, zero_j):
        D[i, j] = float(np.sum((X[i] - X[j]) ** 2))
    return D


def _rows_from_dists(D: np.ndarray, perplexity: float):
    n = D.shape[0]
    if perplexity >= n - 1:
        raise ValueError(
            f"perplexity must be below n-1 ({n - 1}), got {perplexity}"
        )
    target_bits = float(np.log2(perplexity))
    P_cond = np.zeros((n, n), dtype=np.float64)
    betas = np.empty(n, dtype=np.float64)
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        p, beta = _bisect_beta(D[i][mask[i]], target_bits)
        P_cond[i][mask[i]] = p
        betas[i] = beta
    sigmas = np.sqrt(1.0 / (2.0 * betas))
    return P_cond, sigmas


def conditional_rows(X: np.ndarray, perplexity: float):
    """Per-row conditional affinities (each row sums to 1) and their sigmas."""
    X = np.asarray(X, dtype=np.float64)
    return _rows_from_dists(_patched_sq_dists(X), perplexity)


def conditional_affinities(features: np.ndarray, perplexity: float,
                           seed: int = 0) -> AffinityResult:
    """Joint affinity matrix P = (P_cond + P_cond.T) / (2n).

    Exact duplicate rows make the entropy target unreachable, so duplicates
    are first broken with a seeded jitter of scale 1e-10 and the number of
    affected pairs is reported in the result.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 4:
        raise DegenerateInput(f"need at least 4 points as a 2-D array, got shape {X.shape}")
    n = X.shape[0]
    if n > MAX_POINTS:
        raise ValueError(f"exact t-SNE is capped at {MAX_POINTS} points, got {n}")

    D = _patched_sq_dists(X)
    off = ~np.eye(n, dtype=bool)
    dup_pairs = int((D[off] == 0).sum() // 2)
    if dup_pairs:
        rng = np.random.default_rng(seed)
        X = X + rng.standard_normal(X.shape) * 1e-10
        D = _patched_sq_dists(X)
        if int((D[off] == 0).sum()):
            raise DegenerateInput("duplicate rows persisted after jitter")

    P_cond, sigmas = _rows_from_dists(D, perplexity)
    P = (P_cond + P_cond.T) / (2.0 * n)
    return AffinityResult(P=P, sigmas=sigmas, jittered_pairs=dup_pairs)


def student_t_q(Y: np.ndarray):
    """Low-dimensional similarities. Returns (Q, numerators); Q sums to 1."""
    num = 1.0 / (1.0 + pairwise_sq_dists(Y))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    return Q, num


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    """KL(P || Q) over the off-diagonal entries where P is positive."""
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / Q[mask])).sum())


def kl_gradient(P: np.ndarray, Y: np.ndarray):
    """Exact t-SNE gradient 4 * sum_j (p_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)."""
    Q, num = student_t_q(Y)
    S = (P - Q) * num
    grad = 4.0 * ((np.diag(S.sum(axis=1)) - S) @ Y)
    return grad, Q


@dataclass(frozen=True)
class TsneResult:
    """Centered 2-D embedding plus the per-iteration KL trace."""

    embedding: np.ndarray
    kl_history: np.ndarray
    sigmas: np.ndarray
    jittered_pairs: int


def run_tsne(features: np.ndarray, cfg: TsneConfig = TsneConfig()) -> TsneResult:
    """Embed feature rows into 2-D.

    The KL history is always measured against the true (unexaggerated) P,
    so it is a genuine divergence at every iteration, including during early
    exaggeration.
    """
    aff = conditional_affinities(features, cfg.perplexity, seed=cfg.seed)
    P = aff.P
    n = P.shape[0]

    rng = np.random.default_rng(cfg.seed)
    Y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(Y)
    kl_history = np.empty(cfg.iterations, dtype=np.float64)

    for it in range(cfg.iterations):
        exaggerate = it < cfg.exaggeration_iters
        P_eff = P * cfg.early_exaggeration if exaggerate else P
        grad, Q = kl_gradient(P_eff, Y)
        if not np.isfinite(grad).all():
            raise NonFiniteGradient(f"gradient became non-finite at iteration {it}")
        kl_history[it] = kl_divergence(P, Q)
        momentum = (cfg.momentum_early if it < cfg.momentum_switch_iter
                    else cfg.momentum_late)
        velocity = momentum * velocity - cfg.learning_rate * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)

    return TsneResult(embedding=Y, kl_history=kl_history, sigmas=aff.sigmas,
                      jittered_pairs=aff.jittered_pairs)
