"""Objective-aware mixture-of-experts regression network.

A stack of feature-extraction blocks, each holding per-objective experts,
shared experts, one softmax gate per objective and one shared gate.  Each
objective's gate mixes its own experts with the shared ones; the shared gate
mixes every expert in the block.  The last block's shared gate is never used
and is therefore not built.  One tower per objective maps the final gated
feature to a scalar prediction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .numeric import (
    ParamGroup,
    SeededRng,
    Tensor,
    affine_forward,
    backward,
    constant,
    mix,
    mse_loss,
    parameter,
    relu,
    softmax,
)
from .solver import GradientBundle

CHECKPOINT_FORMAT = "paretomoe-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class OMoEConfig:
    K: int = 2
    D_in: int = 50
    n_k: int = 1
    n_s: int = 1
    n_b: int = 2
    n_l: int = 3
    expert_width: int = 32
    expert_out: int = 16
    tower_widths: tuple[int, ...] = (16,)
    # route objective experts' parameters to the shared cell instead
    share_specific_experts: bool = False

    def __post_init__(self):
        self.tower_widths = tuple(self.tower_widths)

    def validate(self, prefix: str = "model") -> None:
        positive = {"K": 1, "D_in": 1, "n_b": 1, "n_l": 1, "expert_width": 1, "expert_out": 1}
        for name, low in positive.items():
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < low:
                raise ConfigError(f"{prefix}.{name}", f"must be an integer >= {low}, got {v!r}")
        for name in ("n_k", "n_s"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{prefix}.{name}", f"must be an integer >= 0, got {v!r}")
        if self.n_k + self.n_s < 1:
            raise ConfigError(f"{prefix}.n_s", "n_k + n_s must be at least 1")
        for i, v in enumerate(self.tower_widths):
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{prefix}.tower_widths[{i}]", f"must be an integer >= 1, got {v!r}")


class Dense:
    def __init__(self, rng: SeededRng, fan_in: int, fan_out: int, bias: bool = True):
        self.W = parameter(rng.glorot(fan_out, fan_in))
        self.b = parameter(np.zeros(fan_out)) if bias else None

    @property
    def tensors(self) -> list[Tensor]:
        return [self.W] if self.b is None else [self.W, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        return affine_forward(x, self.W, self.b)


class MLP:
    """Affine+ReLU hidden stages followed by a linear output stage."""

    def __init__(self, rng: SeededRng, fan_in: int, hidden: Sequence[int], fan_out: int):
        dims = [fan_in, *hidden, fan_out]
        self.layers = [Dense(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]

    @property
    def tensors(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer.tensors]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = relu(layer(x))
        return self.layers[-1](x)


class Expert(MLP):
    def __init__(self, rng: SeededRng, fan_in: int, cfg: OMoEConfig):
        super().__init__(rng, fan_in, [cfg.expert_width] * cfg.n_l, cfg.expert_out)


class Gate:
    """``softmax(W x)`` over ``n`` experts; ``W`` has no bias."""

    def __init__(self, rng: SeededRng, fan_in: int, n: int):
        self.W = parameter(rng.glorot(n, fan_in))

    @property
    def tensors(self) -> list[Tensor]:
        return [self.W]

    def __call__(self, x: Tensor) -> Tensor:
        return softmax(affine_forward(x, self.W))


def select_concat(specific_outputs: Sequence[Sequence[Tensor]], shared_outputs: Sequence[Tensor],
                  k: int | None = None) -> list[Tensor]:
    """Rows gated by objective ``k``'s gate, or by the shared gate if ``k`` is None.

    Objective k sees its own experts then the shared ones; the shared gate
    sees every objective's experts in objective order, then the shared ones.
    """
    if k is None:
        return [e for outs in specific_outputs for e in outs] + list(shared_outputs)
    return list(specific_outputs[k]) + list(shared_outputs)


class FeatureExtractionBlock:
    def __init__(self, rng: SeededRng, fan_in: int, cfg: OMoEConfig, last: bool):
        K = cfg.K
        self.specific_experts = [[Expert(rng, fan_in, cfg) for _ in range(cfg.n_k)] for _ in range(K)]
        self.shared_experts = [Expert(rng, fan_in, cfg) for _ in range(cfg.n_s)]
        self.specific_gates = [Gate(rng, fan_in, cfg.n_k + cfg.n_s) for _ in range(K)]
        self.shared_gate = None if last else Gate(rng, fan_in, K * cfg.n_k + cfg.n_s)

    @property
    def last(self) -> bool:
        return self.shared_gate is None

    def forward(self, xs: Sequence[Tensor], x_shared: Tensor, trace: dict | None = None):
        """Returns per-objective outputs and the shared output (None for the last block)."""
        spec = [[e(xs[k]) for e in experts] for k, experts in enumerate(self.specific_experts)]
        shared = [e(x_shared) for e in self.shared_experts]
        outs, gates = [], []
        for k, gate in enumerate(self.specific_gates):
            g = gate(xs[k])
            gates.append(g)
            outs.append(mix(g, select_concat(spec, shared, k)))
        out_shared = None
        if self.shared_gate is not None:
            g = self.shared_gate(x_shared)
            gates.append(g)
            out_shared = mix(g, select_concat(spec, shared))
        if trace is not None:
            trace.setdefault("gates", []).append([g.data for g in gates])
            trace.setdefault("rows", []).append(
                [select_concat(spec, shared, k) for k in range(len(spec))]
                + ([select_concat(spec, shared)] if self.shared_gate is not None else [])
            )
        return outs, out_shared


@dataclass
class ParamPartition:
    shared: list[ParamGroup] = field(default_factory=list)
    specific: list[list[ParamGroup]] = field(default_factory=list)

    @property
    def shared_size(self) -> int:
        return sum(g.size for g in self.shared)

    def cells(self) -> dict[str, list[ParamGroup]]:
        out = {"shared": self.shared}
        for k, groups in enumerate(self.specific):
            out[f"objective{k + 1}"] = groups
        return out

    def all_groups(self) -> list[ParamGroup]:
        return [g for groups in self.cells().values() for g in groups]


class OMoE:
    """The network.  ``forward`` accepts one input vector or a batch of rows."""

    def __init__(self, cfg: OMoEConfig, rng: SeededRng | int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = rng if isinstance(rng, SeededRng) else SeededRng(rng)
        self.blocks = []
        fan_in = cfg.D_in
        for j in range(cfg.n_b):
            self.blocks.append(FeatureExtractionBlock(rng, fan_in, cfg, last=(j == cfg.n_b - 1)))
            fan_in = cfg.expert_out
        self.towers = [MLP(rng, cfg.expert_out, cfg.tower_widths, 1) for _ in range(cfg.K)]
        self._partition = self._build_partition()

    def forward(self, x, trace: dict | None = None) -> list[Tensor]:
        """Per-objective predictions, each of shape (1,) or (batch, 1)."""
        x = constant(x)
        if x.data.ndim not in (1, 2) or x.shape[-1] != self.cfg.D_in:
            raise DimensionError(f"expected input of length {self.cfg.D_in}, got shape {x.shape}")
        xs = [x] * self.cfg.K
        x_shared = x
        for block in self.blocks:
            xs, x_shared = block.forward(xs, x_shared, trace)
        return [tower(xk) for tower, xk in zip(self.towers, xs)]

    def predict(self, X) -> np.ndarray:
        """Numpy predictions: shape (K,) for one row, (batch, K) for a batch."""
        preds = self.forward(X)
        return np.concatenate([p.data for p in preds], axis=-1)

    def objective_losses(self, X, Y) -> list[Tensor]:
        Y = np.asarray(Y, dtype=np.float64)
        preds = self.forward(X)
        if Y.ndim == 1:
            return [mse_loss(p, Y[k:k + 1]) for k, p in enumerate(preds)]
        return [mse_loss(p, Y[:, k:k + 1]) for k, p in enumerate(preds)]

    def _build_partition(self) -> ParamPartition:
        K = self.cfg.K
        shared: list[ParamGroup] = []
        specific: list[list[ParamGroup]] = [[] for _ in range(K)]
        for j, block in enumerate(self.blocks):
            for k, experts in enumerate(block.specific_experts):
                for p, e in enumerate(experts):
                    grp = ParamGroup(f"block{j + 1}.objective{k + 1}.expert{p + 1}", e.tensors)
                    (shared if self.cfg.share_specific_experts else specific[k]).append(grp)
            for q, e in enumerate(block.shared_experts):
                shared.append(ParamGroup(f"block{j + 1}.shared.expert{q + 1}", e.tensors))
            for k, gate in enumerate(block.specific_gates):
                specific[k].append(ParamGroup(f"block{j + 1}.objective{k + 1}.gate", gate.tensors))
            if block.shared_gate is not None:
                shared.append(ParamGroup(f"block{j + 1}.shared.gate", block.shared_gate.tensors))
        for k, tower in enumerate(self.towers):
            specific[k].append(ParamGroup(f"tower{k + 1}", tower.tensors))
        return ParamPartition(shared, specific)

    def partition_parameters(self) -> ParamPartition:
        return self._partition

    def parameters(self) -> list[Tensor]:
        return [t for g in self._partition.all_groups() for t in g.tensors]

    def state(self) -> dict[str, list[np.ndarray]]:
        return {g.name: [t.data.copy() for t in g.tensors] for g in self._partition.all_groups()}

    def load_state(self, state: dict[str, list[np.ndarray]]) -> None:
        for g in self._partition.all_groups():
            arrays = state[g.name]
            if len(arrays) != len(g.tensors):
                raise DimensionError(f"group {g.name!r}: expected {len(g.tensors)} tensors")
            for t, a in zip(g.tensors, arrays):
                a = np.asarray(a, dtype=np.float64)
                if a.shape != t.data.shape:
                    raise DimensionError(f"group {g.name!r}: shape {a.shape} != {t.data.shape}")
                t.data[...] = a


def partition_parameters(model: OMoE) -> ParamPartition:
    return model.partition_parameters()


def _flat(groups: Sequence[ParamGroup]) -> np.ndarray:
    parts = [g.flat_grad() for g in groups]
    return np.concatenate(parts) if parts else np.zeros(0)


def per_objective_backward(model: OMoE, X, Y, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of objective ``k``'s batch-mean MSE, flattened, w.r.t. the
    shared cell and w.r.t. objective ``k``'s own cell.

    Gradients reaching other objectives' cells are computed and dropped.
    """
    part = model.partition_parameters()
    loss = model.objective_losses(X, Y)[k]
    backward(loss, part.all_groups())
    return _flat(part.shared), _flat(part.specific[k])


def gradient_bundle(model: OMoE, X, Y) -> tuple[GradientBundle, np.ndarray]:
    """One forward pass, then one backward pass per objective.

    Returns the bundle and the per-objective batch losses.
    """
    part = model.partition_parameters()
    groups = part.all_groups()
    losses = model.objective_losses(X, Y)
    shared, specific = [], []
    for k, loss in enumerate(losses):
        backward(loss, groups)
        shared.append(_flat(part.shared))
        specific.append(_flat(part.specific[k]))
    return GradientBundle(shared, specific), np.array([l.item() for l in losses])


def save_checkpoint(model: OMoE, path, extra: dict | None = None) -> None:
    part = model.partition_parameters()
    cells = {
        name: {g.name: [{"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
                        for t in g.tensors] for g in groups}
        for name, groups in part.cells().items()
    }
    cfg = asdict(model.cfg)
    cfg["tower_widths"] = list(cfg["tower_widths"])
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "cells": cells,
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> OMoE:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    model = OMoE(OMoEConfig(**doc["config"]), 0)
    state = {}
    for groups in doc["cells"].values():
        for name, tensors in groups.items():
            state[name] = [np.array(t["data"], dtype=np.float64).reshape(t["shape"]) for t in tensors]
    model.load_state(state)
    return model
