"""Brute-force references for the simplex-constrained quadratic.

These never call the Frank-Wolfe solver: small K is seeded by exhaustive
grid search and every K is refined by accelerated projected gradient.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np


def project_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum w = 1}`` (sort-based)."""
    y = np.asarray(y, dtype=np.float64)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


def simplex_grid(K: int, step: float) -> np.ndarray:
    """All points of the simplex whose coordinates are multiples of ``step``."""
    n = int(round(1.0 / step))
    if K == 1:
        return np.ones((1, 1))
    # stars and bars: choose K-1 bar positions among n + K - 1 slots
    pts = []
    for bars in combinations(range(n + K - 1), K - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(n + K - 2 - prev)
        pts.append(counts)
    return np.asarray(pts, dtype=np.float64) / n


def grid_search(M: np.ndarray, step: float) -> tuple[np.ndarray, float]:
    W = simplex_grid(M.shape[0], step)
    vals = np.einsum("ni,ij,nj->n", W, M, W)
    i = int(np.argmin(vals))
    return W[i], float(vals[i])


def projected_gradient(M: np.ndarray, w0: np.ndarray, iters: int = 5000, tol: float = 1e-15):
    """FISTA on ``w^T M w`` with simplex projection."""
    L = 2.0 * max(np.linalg.eigvalsh(M).max(), 1e-300)
    w = project_to_simplex(w0)
    z, t = w.copy(), 1.0
    best_w, best = w, float(w @ M @ w)
    for _ in range(iters):
        w_next = project_to_simplex(z - (2.0 * (M @ z)) / L)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = w_next + ((t - 1.0) / t_next) * (w_next - w)
        val = float(w_next @ M @ w_next)
        if val < best:
            best_w, best = w_next, val
        if np.abs(w_next - w).max() < tol:
            break
        w, t = w_next, t_next
    return best_w, best


def min_norm_oracle(M) -> tuple[np.ndarray, float]:
    """Reference minimiser of ``w^T M w`` on the simplex.

    Grid resolution is 1e-3 for K = 2 and 1e-2 for K = 3; larger K start
    from the best vertex or the barycentre.  All cases finish with
    projected-gradient refinement.
    """
    M = np.asarray(M, dtype=np.float64)
    K = M.shape[0]
    if K == 1:
        return np.ones(1), float(M[0, 0])
    if not np.any(M):
        return np.full(K, 1.0 / K), 0.0
    if K == 2:
        w0, _ = grid_search(M, 1e-3)
    elif K == 3:
        w0, _ = grid_search(M, 1e-2)
    else:
        cands = [np.full(K, 1.0 / K)] + list(np.eye(K))
        w0 = min(cands, key=lambda c: float(c @ M @ c))
    return projected_gradient(M, w0)


def random_psd(rng: np.random.Generator, K: int, rank: int | None = None, dim: int = 8) -> np.ndarray:
    """Trace-normalised Gram matrix of ``K`` random gradient vectors."""
    rank = dim if rank is None else rank
    G = rng.standard_normal((K, rank))
    # mix in a shared direction so conflicting and aligned cases both occur
    G += rng.standard_normal() * rng.standard_normal(rank)
    M = G @ G.T
    return M / np.trace(M)
