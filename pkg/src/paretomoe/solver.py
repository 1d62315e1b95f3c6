"""Min-norm loss weighting over the probability simplex.

Given per-objective gradients with respect to the shared parameters, the
weights ``w`` minimising ``||sum_k w_k g_k||^2`` are found by Frank-Wolfe on
the Gram matrix ``M_ij = <g_i, g_j>``.  The module also carries the
diagnostics used to check the classical Frank-Wolfe guarantees on this
quadratic: the duality gap, the curvature constant, the per-step descent
inequality and the primal/gap rate bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .oracles import min_norm_oracle

LINE_SEARCH = "line-search"
FIXED_DECAY = "fixed-decay"

# beta in the duality-gap bound 2 * beta * C_f / (R + 2).
GAP_BETA = 27.0 / 8.0


@dataclass
class GradientBundle:
    """Flat per-objective gradients: ``shared[k]`` w.r.t. the shared
    parameters and ``specific[k]`` w.r.t. objective k's own parameters."""

    shared: list[np.ndarray]
    specific: list[np.ndarray]

    def __post_init__(self):
        if not self.shared:
            raise DomainError("gradient bundle needs at least one objective")
        if len(self.shared) != len(self.specific):
            raise DimensionError(
                f"{len(self.shared)} shared gradients but {len(self.specific)} specific ones"
            )
        lengths = {g.size for g in self.shared}
        if len(lengths) != 1:
            raise DimensionError(f"shared gradients differ in length: {sorted(lengths)}")

    @property
    def K(self) -> int:
        return len(self.shared)


@dataclass
class FWConfig:
    max_iter: int = 100
    v_tol: float = 1e-4
    step_mode: str = LINE_SEARCH

    def validate(self, prefix: str = "solver") -> None:
        if not isinstance(self.max_iter, int) or self.max_iter < 1:
            raise ConfigError(f"{prefix}.max_iter", "must be an integer >= 1")
        if not self.v_tol > 0:
            raise ConfigError(f"{prefix}.v_tol", "must be > 0")
        if self.step_mode not in (LINE_SEARCH, FIXED_DECAY):
            raise ConfigError(
                f"{prefix}.step_mode", f"must be {LINE_SEARCH!r} or {FIXED_DECAY!r}"
            )


@dataclass
class FWDiagnostics:
    """Iterates ``w^(0..n)`` with their objective and duality gap, plus the
    vertex and step chosen at each of the ``n`` iterations."""

    iterates: list[np.ndarray] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    gaps: list[float] = field(default_factory=list)
    vertices: list[int] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)

    @property
    def n_iter(self) -> int:
        return len(self.steps)

    def rows(self) -> list[dict]:
        """One record per iterate: r, w_1..w_K, objective, gap, vertex, step.

        The final iterate has no outgoing step; its vertex and step are empty.
        """
        out = []
        for r, w in enumerate(self.iterates):
            row = {"r": r}
            for i, wi in enumerate(w):
                row[f"w{i + 1}"] = float(wi)
            row["objective"] = self.objectives[r]
            row["gap"] = self.gaps[r]
            row["vertex"] = self.vertices[r] if r < self.n_iter else ""
            row["step"] = self.steps[r] if r < self.n_iter else ""
            out.append(row)
        return out


def check_simplex(w, tol: float = 1e-12) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DomainError(f"simplex weights must be a non-empty vector, got shape {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise DomainError(f"weights {w.tolist()} are not on the probability simplex")
    return w


def gram_matrix(bundle: GradientBundle | Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise inner products of the shared-parameter gradients."""
    grads = bundle.shared if isinstance(bundle, GradientBundle) else list(bundle)
    lengths = {np.size(g) for g in grads}
    if len(lengths) > 1:
        raise DimensionError(f"shared gradients differ in length: {sorted(lengths)}")
    G = np.stack([np.ravel(g) for g in grads]).astype(np.float64)
    K = G.shape[0]
    M = np.empty((K, K))
    for i in range(K):
        for j in range(i, K):
            M[i, j] = M[j, i] = np.dot(G[i], G[j])
    return M


def closed_form_two(l1l1: float, l1l2: float, l2l2: float) -> float:
    """Weight on ``l1`` minimising ``||w l1 + (1 - w) l2||^2`` over [0, 1]."""
    if l1l2 >= l1l1:
        return 1.0
    if l1l2 >= l2l2:
        return 0.0
    denom = l1l1 - 2.0 * l1l2 + l2l2
    assert denom > 0.0, "unreachable: equal vectors take the first branch"
    w = (l2l2 - l1l2) / denom
    return min(1.0, max(0.0, w))


def quadratic(M: np.ndarray, w: np.ndarray) -> float:
    return float(w @ M @ w)


def duality_gap(M: np.ndarray, w) -> float:
    """``max_s <w - s, 2 M w>`` over the simplex, i.e. against the best vertex."""
    w = np.asarray(w, dtype=np.float64)
    grad = 2.0 * (M @ w)
    return float(max(w @ grad - grad.min(), 0.0))


def pareto_stationarity_residual(M: np.ndarray, w) -> float:
    """Squared norm of the weighted shared gradient, ``w^T M w``."""
    w = np.asarray(w, dtype=np.float64)
    return quadratic(np.asarray(M, dtype=np.float64), w)


def _validate_gram(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"Gram matrix must be square, got shape {M.shape}")
    if M.shape[0] == 0:
        raise DomainError("Gram matrix is empty (K = 0)")
    if not np.all(np.isfinite(M)):
        raise DomainError("Gram matrix has non-finite entries")
    return M


def frank_wolfe(M, cfg: FWConfig | None = None) -> tuple[np.ndarray, FWDiagnostics]:
    """Minimise ``w^T M w`` over the simplex starting from uniform weights.

    Each iteration moves toward the vertex with the smallest entry of
    ``M w`` (lowest index on ties) by an exact line search or the fixed
    ``2 / (r + 2)`` schedule; iteration stops once the step is at most
    ``v_tol`` or after ``max_iter`` iterations.
    """
    cfg = cfg or FWConfig()
    M = _validate_gram(M)
    K = M.shape[0]
    w = np.full(K, 1.0 / K)
    diag = FWDiagnostics()

    def record(w):
        diag.iterates.append(w.copy())
        diag.objectives.append(quadratic(M, w))
        diag.gaps.append(duality_gap(M, w))

    record(w)
    if not np.any(M):
        diag.gaps[-1] = 0.0
        return w, diag

    for r in range(cfg.max_iter):
        Mw = M @ w
        k = int(np.argmin(Mw))
        if cfg.step_mode == FIXED_DECAY:
            v = 2.0 / (r + 2.0)
        else:
            c = float(w @ Mw)
            # no vertex improves on w: it is already optimal
            v = 0.0 if Mw[k] >= c else closed_form_two(M[k, k], Mw[k], c)
        w = (1.0 - v) * w
        w[k] += v
        diag.vertices.append(k)
        diag.steps.append(v)
        record(w)
        if v <= cfg.v_tol:
            break

    w = w / w.sum()
    return w, diag


def curvature_constant_quadratic(M) -> float:
    """Curvature constant of ``w^T M w`` on the simplex.

    Equals ``2 max_{s,w} (s - w)^T M (s - w)``; the maximum of this convex
    form over the difference set is attained at a pair of vertices.
    """
    M = np.asarray(M, dtype=np.float64)
    d = np.diag(M)
    pair = d[:, None] + d[None, :] - 2.0 * M
    return float(2.0 * max(pair.max(), 0.0))


def primal_bound(C_f: float, r: int, delta: float = 0.0) -> float:
    return 2.0 * C_f * (1.0 + delta) / (r + 2.0)


def gap_bound(C_f: float, R: int, delta: float = 0.0) -> float:
    return 2.0 * GAP_BETA * C_f * (1.0 + delta) / (R + 2.0)


def _slack(scale: float) -> float:
    # absorbs rounding in the recorded objective values
    return 1e-12 * max(1.0, scale)


@dataclass
class BoundReport:
    name: str
    passed: bool
    checked: int
    violations: int
    max_slack: float  # largest (lhs - rhs); <= 0 means the bound holds with room
    detail: dict = field(default_factory=dict)


def verify_primal_bound(M, R: int, optimum: float | None = None, delta: float = 0.0) -> BoundReport:
    """Check ``L(w^(r)) - L(w*) <= 2 C_f (1 + delta) / (r + 2)`` for r = 1..R
    under the fixed-decay schedule.  ``optimum`` defaults to the independent
    projected-gradient oracle."""
    M = _validate_gram(M)
    if optimum is None:
        optimum = min_norm_oracle(M)[1]
    C_f = curvature_constant_quadratic(M)
    _, diag = frank_wolfe(M, FWConfig(max_iter=R, v_tol=1e-300, step_mode=FIXED_DECAY))
    tol = _slack(np.trace(M))
    violations, worst = 0, -math.inf
    for r in range(1, len(diag.objectives)):
        s = (diag.objectives[r] - optimum) - primal_bound(C_f, r, delta)
        worst = max(worst, s)
        violations += s > tol
    checked = len(diag.objectives) - 1
    if checked == 0:
        worst = 0.0
    return BoundReport("primal", violations == 0, checked, violations, worst,
                       {"C_f": C_f, "optimum": optimum})


def verify_gap_bound(M, R: int, delta: float = 0.0) -> BoundReport:
    """Check ``min_{1<=r<=R} phi(w^(r)) <= 2 beta C_f (1 + delta) / (R + 2)``."""
    if R < 2:
        raise DomainError(f"gap bound needs R >= 2, got {R}")
    M = _validate_gram(M)
    C_f = curvature_constant_quadratic(M)
    _, diag = frank_wolfe(M, FWConfig(max_iter=R, v_tol=1e-300, step_mode=FIXED_DECAY))
    gaps = diag.gaps[1:] or [0.0]
    s = min(gaps) - gap_bound(C_f, R, delta)
    ok = s <= _slack(np.trace(M))
    return BoundReport("gap", ok, 1, int(not ok), s, {"C_f": C_f, "min_gap": min(gaps)})


def verify_descent_lemma(M, R: int, delta: float = 0.0) -> BoundReport:
    """Per-step inequality ``L(w') <= L(w) - g phi(w) + g^2/2 C_f (1 + delta)``
    at every fixed-decay step, where ``g`` is the step taken."""
    M = _validate_gram(M)
    C_f = curvature_constant_quadratic(M)
    _, diag = frank_wolfe(M, FWConfig(max_iter=R, v_tol=1e-300, step_mode=FIXED_DECAY))
    tol = _slack(np.trace(M))
    violations, worst = 0, -math.inf
    for r, g in enumerate(diag.steps):
        rhs = diag.objectives[r] - g * diag.gaps[r] + 0.5 * g * g * C_f * (1.0 + delta)
        s = diag.objectives[r + 1] - rhs
        worst = max(worst, s)
        violations += s > tol
    if not diag.steps:
        worst = 0.0
    return BoundReport("descent", violations == 0, len(diag.steps), violations, worst, {"C_f": C_f})


def apply_updates(partition, bundle: GradientBundle, w, lr: float) -> None:
    """SGD step: each objective's own parameters follow their own gradient,
    shared parameters follow the ``w``-weighted sum of shared gradients."""
    w = check_simplex(w, tol=1e-9)
    if not lr > 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    K = bundle.K
    if len(partition.specific) != K or w.size != K:
        raise DimensionError(
            f"partition has {len(partition.specific)} objectives, bundle {K}, weights {w.size}"
        )
    shared_dir = np.zeros_like(bundle.shared[0])
    for k in range(K):
        if w[k] != 0.0:
            shared_dir += w[k] * bundle.shared[k]
    _apply_flat(partition.shared, -lr * shared_dir)
    for k in range(K):
        _apply_flat(partition.specific[k], -lr * bundle.specific[k])


def _apply_flat(groups, delta: np.ndarray) -> None:
    total = sum(g.size for g in groups)
    if delta.size != total:
        raise DimensionError(f"update of length {delta.size} for parameters of size {total}")
    offset = 0
    for g in groups:
        g.add_flat(delta[offset:offset + g.size])
        offset += g.size
