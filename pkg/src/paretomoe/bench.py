"""Random-instance checks of the Frank-Wolfe solver against its convergence
bounds and the brute-force oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .oracles import min_norm_oracle, random_psd
from .solver import FWConfig, frank_wolfe, quadratic, verify_descent_lemma, verify_gap_bound, verify_primal_bound

ORACLE_TOL = 1e-3
GAP_HORIZONS = (2, 10, 50)


@dataclass
class CheckSummary:
    name: str
    instances: int = 0
    checked: int = 0
    violations: int = 0
    worst: float = -np.inf  # largest slack (bound checks) or error (oracle check)

    def add(self, checked: int, violations: int, worst: float) -> None:
        self.instances += 1
        self.checked += checked
        self.violations += violations
        self.worst = max(self.worst, worst)


@dataclass
class BenchReport:
    K: int
    n: int
    seed: int
    checks: list[CheckSummary] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(c.violations for c in self.checks)

    def check(self, name: str) -> CheckSummary:
        return next(c for c in self.checks if c.name == name)

    def lines(self) -> list[str]:
        out = [f"solver bench: K={self.K} instances={self.n} seed={self.seed}",
               f"{'check':<16}{'instances':>10}{'checked':>10}{'violations':>12}{'worst':>14}"]
        for c in self.checks:
            out.append(f"{c.name:<16}{c.instances:>10}{c.checked:>10}{c.violations:>12}{c.worst:>14.3e}")
        out.append(f"violations: {self.violations}")
        return out


def instances(K: int, n: int, seed: int) -> list[np.ndarray]:
    """Trace-normalised PSD Gram matrices with ranks from 1 up to 2K."""
    rng = np.random.default_rng(seed)
    return [random_psd(rng, K, rank=int(rng.integers(1, 2 * K + 1))) for _ in range(n)]


def run_bench(K: int, n: int, seed: int, R: int = 100, oracle_iters: int = 1000,
              oracle_tol: float = ORACLE_TOL) -> BenchReport:
    """Primal bound over r = 1..R, gap bound at each horizon, per-step descent
    inequality, and oracle agreement of the line-search solver."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    primal, gap, descent, oracle = (CheckSummary(s) for s in ("primal-bound", "gap-bound", "descent-step", "oracle"))
    fw = FWConfig(max_iter=oracle_iters)
    for M in instances(K, n, seed):
        _, opt = min_norm_oracle(M)
        rep = verify_primal_bound(M, R, optimum=opt)
        primal.add(rep.checked, rep.violations, rep.max_slack)
        for horizon in GAP_HORIZONS:
            rep = verify_gap_bound(M, horizon)
            gap.add(rep.checked, rep.violations, rep.max_slack)
        rep = verify_descent_lemma(M, R)
        descent.add(rep.checked, rep.violations, rep.max_slack)
        w, _ = frank_wolfe(M, fw)
        err = quadratic(M, w) - opt
        oracle.add(1, int(abs(err) > oracle_tol), abs(err))
    gap.instances //= len(GAP_HORIZONS)
    return BenchReport(K, n, seed, [primal, gap, descent, oracle])
