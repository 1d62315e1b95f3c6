"""Training loop with min-norm loss weighting, evaluation metrics, and the
comparison/ablation harnesses built on top of it."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import LaggedDataset, Normalizer, PreparedData
from .errors import ConfigError, DivergenceError
from .model import OMoE, OMoEConfig, gradient_bundle
from .numeric import SeededRng
from .solver import FWConfig, apply_updates, frank_wolfe, gram_matrix

log = logging.getLogger(__name__)

POR = "por"
FIXED = "fixed"


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-2
    weight_mode: str = POR
    fixed_weights: tuple[float, ...] | None = None  # None means uniform
    seed: int = 0
    por_schedule: str = "batch"  # or "epoch": solve once per epoch
    fw: FWConfig = field(default_factory=FWConfig)
    model: OMoEConfig = field(default_factory=OMoEConfig)

    def validate(self, prefix: str = "training") -> None:
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"{prefix}.epochs", "must be an integer >= 1")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size", "must be an integer >= 1")
        if not (isinstance(self.lr, (int, float)) and self.lr > 0):
            raise ConfigError(f"{prefix}.lr", "must be > 0")
        if self.weight_mode not in (POR, FIXED):
            raise ConfigError(f"{prefix}.weight_mode", f"must be {POR!r} or {FIXED!r}")
        if self.por_schedule not in ("batch", "epoch"):
            raise ConfigError(f"{prefix}.por_schedule", "must be 'batch' or 'epoch'")
        if self.fixed_weights is not None:
            w = np.asarray(self.fixed_weights, dtype=np.float64)
            if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ConfigError(f"{prefix}.fixed_weights", "must be non-negative and sum to 1")
            if w.size != self.model.K:
                raise ConfigError(f"{prefix}.fixed_weights", f"needs {self.model.K} entries")
        self.fw.validate()
        self.model.validate()


@dataclass
class ObjectiveMetrics:
    name: str
    rmse: float
    mae: float
    r2: float | None  # None when the target is constant
    rmse_scaled: float
    mae_scaled: float
    r2_scaled: float | None


@dataclass
class MetricsReport:
    objectives: list[ObjectiveMetrics]
    curves: list[dict] = field(default_factory=list)  # per-epoch validation records

    def r2(self) -> np.ndarray:
        return np.array([np.nan if m.r2 is None else m.r2 for m in self.objectives])

    def rows(self) -> list[dict]:
        return [vars(m).copy() for m in self.objectives]


@dataclass
class TrajectoryEntry:
    step: int
    epoch: int
    weights: np.ndarray
    losses: np.ndarray
    residual: float  # ||sum_k w_k grad_sh L_k||^2 for the weights applied


@dataclass
class TrainResult:
    model: OMoE
    report: MetricsReport
    trajectory: list[TrajectoryEntry]
    best_epoch: int
    best_val_loss: float
    final_val_loss: float


def r2_score(y: np.ndarray, yhat: np.ndarray) -> float | None:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def regression_metrics(y: np.ndarray, yhat: np.ndarray) -> tuple[float, float, float | None]:
    """RMSE, MAE and R^2 of one target column."""
    err = y - yhat
    return float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err))), r2_score(y, yhat)


def evaluate(model: OMoE, part: LaggedDataset, y_scaler: Normalizer,
             names: Sequence[str] | None = None) -> MetricsReport:
    """Per-objective metrics in physical units (and on the scaled targets)."""
    if len(part) == 0:
        raise ValueError("cannot evaluate on an empty partition")
    pred = model.predict(part.X)
    y_phys, p_phys = y_scaler.inverse(part.Y), y_scaler.inverse(pred)
    out = []
    for k in range(part.Y.shape[1]):
        rmse, mae, r2 = regression_metrics(y_phys[:, k], p_phys[:, k])
        rmse_s, mae_s, r2_s = regression_metrics(part.Y[:, k], pred[:, k])
        name = names[k] if names else f"y{k + 1}"
        out.append(ObjectiveMetrics(name, rmse, mae, r2, rmse_s, mae_s, r2_s))
    return MetricsReport(out)


def _val_losses(model: OMoE, part: LaggedDataset) -> np.ndarray:
    pred = model.predict(part.X)
    return np.mean((pred - part.Y) ** 2, axis=0)


def _fixed_weights(cfg: TrainConfig, K: int) -> np.ndarray:
    if cfg.fixed_weights is None:
        return np.full(K, 1.0 / K)
    return np.asarray(cfg.fixed_weights, dtype=np.float64)


# overflow is caught below as DivergenceError, so numpy's warnings are noise
@np.errstate(over="ignore", invalid="ignore")
def train(cfg: TrainConfig, data: PreparedData) -> TrainResult:
    """Mini-batch SGD where every step solves for loss weights (or uses fixed ones).

    The model with the lowest mean validation MSE over epochs is returned.
    """
    if min(len(data.train), len(data.val), len(data.test)) == 0:
        raise ValueError("train, validation and test partitions must be non-empty")
    cfg = replace(cfg, model=replace(cfg.model, K=data.K, D_in=data.D_in))
    cfg.validate()
    K = data.K
    rng = SeededRng(cfg.seed)
    model = OMoE(cfg.model, rng)
    part = model.partition_parameters()
    X, Y = data.train.X, data.train.Y
    n = len(X)
    fixed = _fixed_weights(cfg, K)
    trajectory: list[TrajectoryEntry] = []
    curves: list[dict] = []
    best_state, best_val, best_epoch = None, math.inf, -1
    step = 0
    w = fixed
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            bundle, losses = gradient_bundle(model, X[idx], Y[idx])
            if not np.all(np.isfinite(losses)):
                raise DivergenceError(step, f"non-finite batch loss {losses.tolist()}")
            M = gram_matrix(bundle)
            if not np.all(np.isfinite(M)):
                raise DivergenceError(step, "non-finite gradients")
            if cfg.weight_mode == POR:
                if cfg.por_schedule == "batch" or b == 0:
                    w, _ = frank_wolfe(M, cfg.fw)
            else:
                w = fixed
            apply_updates(part, bundle, w, cfg.lr)
            trajectory.append(TrajectoryEntry(step, epoch, w.copy(), losses, float(w @ M @ w)))
            batch_losses.append(losses)
            step += 1
        val = _val_losses(model, data.val)
        if not np.all(np.isfinite(val)):
            raise DivergenceError(step, "non-finite validation loss")
        record = {"epoch": epoch, "val_mean": float(val.mean())}
        train_mean = np.mean(batch_losses, axis=0)
        for k in range(K):
            record[f"train_mse{k + 1}"] = float(train_mean[k])
            record[f"val_mse{k + 1}"] = float(val[k])
        curves.append(record)
        if val.mean() < best_val:
            best_val, best_epoch, best_state = float(val.mean()), epoch, model.state()
        log.debug("epoch %d val %.5f", epoch, val.mean())
    final_val = curves[-1]["val_mean"]
    model.load_state(best_state)
    report = evaluate(model, data.test, data.y_scaler, data.quality)
    report.curves = curves
    return TrainResult(model, report, trajectory, best_epoch, best_val, final_val)


# ---------------------------------------------------------------------------
# comparisons


@dataclass
class SeesawReport:
    """Per-objective test R^2 of single-objective, fixed-weight and
    min-norm-weighted training, averaged over seeds."""

    names: list[str]
    single: np.ndarray
    fixed: np.ndarray
    por: np.ndarray

    @property
    def negative_transfer(self) -> np.ndarray:
        return self.fixed - self.single

    @property
    def por_gain(self) -> np.ndarray:
        return self.por - self.fixed

    def rows(self) -> list[dict]:
        out = []
        for label, vals in (("single", self.single), ("fixed", self.fixed), ("por", self.por),
                            ("fixed-single", self.negative_transfer), ("por-fixed", self.por_gain)):
            row = {"row": label}
            row.update({f"r2_{n}": float(v) for n, v in zip(self.names, vals)})
            out.append(row)
        return out


def compare_seesaw(data: PreparedData, base_cfg: TrainConfig, seeds: Sequence[int] = (0,)) -> SeesawReport:
    K = data.K
    single = np.zeros((len(seeds), K))
    fixed = np.zeros((len(seeds), K))
    por = np.zeros((len(seeds), K))
    for i, seed in enumerate(seeds):
        for k in range(K):
            sub = data.select_objectives([k])
            res = train(replace(base_cfg, seed=seed, weight_mode=FIXED, fixed_weights=None), sub)
            single[i, k] = res.report.r2()[0]
        fixed[i] = train(replace(base_cfg, seed=seed, weight_mode=FIXED, fixed_weights=None), data).report.r2()
        por[i] = train(replace(base_cfg, seed=seed, weight_mode=POR), data).report.r2()
    return SeesawReport(list(data.quality), single.mean(0), fixed.mean(0), por.mean(0))


# ---------------------------------------------------------------------------
# ablation grids

STRUCTURE_KEYS = ("n_k", "n_s", "n_b", "n_l", "n_e")


@dataclass
class AblationSpec:
    """Grid cells are dicts of model overrides (``n_e`` sets n_k = n_s = n_e)."""

    cells: list[dict]
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    modes: tuple[str, ...] = (POR,)

    def validate(self) -> None:
        if not self.cells:
            raise ConfigError("grid.cells", "grid is empty")
        if not self.seeds:
            raise ConfigError("grid.seeds", "at least one seed is required")
        for i, cell in enumerate(self.cells):
            for key, v in cell.items():
                if key not in STRUCTURE_KEYS:
                    raise ConfigError(f"grid.cells[{i}].{key}", "unknown ablation axis")
                if not isinstance(v, int) or v < 0:
                    raise ConfigError(f"grid.cells[{i}].{key}", "must be a non-negative integer")
        for m in self.modes:
            if m not in (POR, FIXED):
                raise ConfigError("grid.modes", f"unknown mode {m!r}")


def expert_table_spec(seeds=(0, 1, 2, 3, 4), sizes=(1, 2, 3, 4)) -> AblationSpec:
    """(n_k, n_s) in {(n, 0), (0, n), (n, n)} for each size."""
    cells = [c for n in sizes for c in ({"n_k": n, "n_s": 0}, {"n_k": 0, "n_s": n}, {"n_k": n, "n_s": n})]
    return AblationSpec(cells, tuple(seeds))


def sensitivity_spec(seeds=(0, 1, 2, 3, 4), modes=(POR, FIXED)) -> AblationSpec:
    """One-at-a-time sweeps: n_e in 1..5, n_b in 1..4, n_l in 1..5."""
    cells = ([{"n_e": v} for v in range(1, 6)] + [{"n_b": v} for v in range(1, 5)]
             + [{"n_l": v} for v in range(1, 6)])
    return AblationSpec(cells, tuple(seeds), tuple(modes))


def cell_config(base: TrainConfig, cell: dict, mode: str, seed: int) -> TrainConfig:
    overrides = dict(cell)
    if "n_e" in overrides:
        n_e = overrides.pop("n_e")
        overrides.update(n_k=n_e, n_s=n_e)
    return replace(base, seed=seed, weight_mode=mode, model=replace(base.model, **overrides))


def sample_std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def run_ablation(spec: AblationSpec, data: PreparedData, base: TrainConfig) -> list[dict]:
    """Train every (cell, mode) over all seeds; one row per (cell, mode).

    Failed runs are logged in the row's ``errors`` column and the grid continues.
    """
    spec.validate()
    names = list(data.quality)
    rows = []
    for cell in spec.cells:
        for mode in spec.modes:
            r2s, errors = [], []
            for seed in spec.seeds:
                try:
                    res = train(cell_config(base, cell, mode, seed), data)
                    r2s.append(res.report.r2())
                except Exception as exc:  # recorded per cell, grid continues
                    errors.append(f"seed {seed}: {exc}")
                    log.warning("ablation cell %s/%s seed %d failed: %s", cell, mode, seed, exc)
            row = {key: cell.get(key, "") for key in STRUCTURE_KEYS}
            row.update(mode=mode, runs=len(r2s))
            arr = np.array(r2s) if r2s else np.full((0, len(names)), np.nan)
            for k, name in enumerate(names):
                vals = arr[:, k] if len(arr) else []
                row[f"r2_{name}_mean"] = float(np.mean(vals)) if len(vals) else float("nan")
                row[f"r2_{name}_std"] = sample_std(vals) if len(vals) else float("nan")
            row["r2_values"] = arr.tolist()
            row["errors"] = "; ".join(errors)
            rows.append(row)
    return rows


def por_fixed_deltas(rows: list[dict], names: Sequence[str]) -> list[dict]:
    """Mean-R^2 difference (por minus fixed) for every cell run in both modes."""
    keyed = {}
    for row in rows:
        keyed.setdefault(tuple(row[k] for k in STRUCTURE_KEYS), {})[row["mode"]] = row
    out = []
    for key, modes in keyed.items():
        if POR in modes and FIXED in modes:
            d = dict(zip(STRUCTURE_KEYS, key))
            for n in names:
                d[f"delta_r2_{n}"] = modes[POR][f"r2_{n}_mean"] - modes[FIXED][f"r2_{n}_mean"]
            out.append(d)
    return out
