"""Dense float64 tensors with a small reverse-mode tape.

Only the operations the mixture-of-experts network needs are provided:
affine maps, ReLU, softmax, gate-weighted mixing of expert outputs and
mean squared error.  Every forward call builds a fresh graph; gradients of
intermediate nodes live only for the duration of a single backward pass, so
several losses produced by one forward pass can each be differentiated once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, StateError

__all__ = [
    "DimensionError",
    "DomainError",
    "StateError",
    "Tensor",
    "ParamGroup",
    "SeededRng",
    "parameter",
    "constant",
    "affine_forward",
    "relu",
    "softmax",
    "mix",
    "mse_loss",
    "backward",
    "finite_diff_grad",
]


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    Leaves created with ``parameter`` carry a persistent ``grad`` buffer.
    Interior nodes hold their parents and a closure mapping the upstream
    gradient to one gradient per parent.
    """

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "consumed")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = np.zeros_like(self.data) if (requires_grad and not parents) else None
        self.consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


@dataclass
class ParamGroup:
    """Named, ordered collection of trainable tensors."""

    name: str
    tensors: list[Tensor] = field(default_factory=list)

    @property
    def grads(self) -> list[np.ndarray]:
        return [t.grad for t in self.tensors]

    @property
    def size(self) -> int:
        return sum(t.data.size for t in self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad[...] = 0.0

    def flat_grad(self) -> np.ndarray:
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate([t.grad.ravel() for t in self.tensors])

    def flat_data(self) -> np.ndarray:
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self.tensors])

    def add_flat(self, delta: np.ndarray) -> None:
        """In-place ``params += delta`` for a flat vector laid out like ``flat_data``."""
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != (self.size,):
            raise DimensionError(
                f"group {self.name!r} holds {self.size} values, update has shape {delta.shape}"
            )
        offset = 0
        for t in self.tensors:
            n = t.data.size
            t.data += delta[offset:offset + n].reshape(t.data.shape)
            offset += n


class SeededRng:
    """Seeded generator used for initialization and batch order."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def glorot(self, fan_out: int, fan_in: int) -> np.ndarray:
        # uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out))
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return self.generator.uniform(-a, a, size=(fan_out, fan_in))

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def spawn(self, key: int) -> "SeededRng":
        return SeededRng(np.random.SeedSequence([self.seed, key]).generate_state(1, np.uint64)[0])


def affine_forward(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``W x + b`` for a vector ``x``, or row-wise ``x W^T + b`` for a batch.

    ``W`` has shape (out, in).  ``b`` may be omitted for a pure linear map.
    """
    x = constant(x)
    W = constant(W)
    if W.data.ndim != 2 or x.data.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"cannot apply W of shape {W.shape} to x of shape {x.shape}")
    if b is not None:
        b = constant(b)
        if b.shape != (W.shape[0],):
            raise DimensionError(f"bias of shape {b.shape} does not match W of shape {W.shape}")
    xd, Wd = x.data, W.data
    out = xd @ Wd.T
    if b is not None:
        out = out + b.data

    def grad_fn(g):
        gx = g @ Wd
        if xd.ndim == 1:
            gW = np.outer(g, xd)
        else:
            gW = g.T @ xd
        if b is None:
            return gx, gW
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gW, gb

    parents = (x, W) if b is None else (x, W, b)
    return Tensor(out, parents, grad_fn)


def relu(x: Tensor) -> Tensor:
    x = constant(x)
    mask = x.data > 0.0
    # subgradient at exactly 0 is 0
    return Tensor(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax(z: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row maximum."""
    z = constant(z)
    if z.data.size == 0 or z.shape[-1] == 0:
        raise DomainError("softmax of an empty input")
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor(s, (z,), grad_fn)


def mix(weights: Tensor, rows: Sequence[Tensor]) -> Tensor:
    """Convex combination ``sum_i weights[..., i] * rows[i]``.

    ``weights`` has shape (n,) or (batch, n); each row tensor has shape (d,)
    or (batch, d) correspondingly.
    """
    weights = constant(weights)
    rows = [constant(r) for r in rows]
    n = len(rows)
    if weights.shape[-1] != n:
        raise DimensionError(f"{weights.shape[-1]} gate weights for {n} expert rows")
    shapes = {r.shape for r in rows}
    if len(shapes) != 1:
        raise DimensionError(f"expert rows disagree in shape: {sorted(shapes)}")
    stacked = np.stack([r.data for r in rows], axis=-2)  # (..., n, d)
    wd = weights.data
    out = np.einsum("...n,...nd->...d", wd, stacked)

    def grad_fn(g):
        gw = np.einsum("...d,...nd->...n", g, stacked)
        grows = [wd[..., i, None] * g for i in range(n)]
        return (gw, *grows)

    return Tensor(out, (weights, *rows), grad_fn)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared elementwise differences, as a scalar node."""
    pred = constant(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {t.shape}")
    diff = pred.data - t
    n = max(diff.size, 1)
    value = np.array(np.dot(diff.ravel(), diff.ravel()) / n)
    return Tensor(value, (pred,), lambda g: (g * (2.0 / n) * diff,))


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, groups: Iterable[ParamGroup] = (), accumulate: bool = False) -> None:
    """Populate ``grad`` of every parameter reachable from the scalar ``loss``.

    Groups passed in ``groups`` are zeroed first (so unreachable groups end
    with zero gradients); reachable parameters are zeroed too unless
    ``accumulate`` is set.  Each loss node may be differentiated once.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.consumed:
        raise StateError("backward already ran for this loss; run a new forward pass")
    loss.consumed = True
    if not accumulate:
        for grp in groups:
            grp.zero_grad()
    order = _topological(loss)
    if not accumulate:
        for node in order:
            if node.is_leaf and node.grad is not None:
                node.grad[...] = 0.0
    upstream: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is not None:
                node.grad += g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in upstream:
                upstream[key] = upstream[key] + pg
            else:
                upstream[key] = pg


def finite_diff_grad(
    f: Callable[[ParamGroup], float], params: ParamGroup, eps: float = 1e-5
) -> list[np.ndarray]:
    """Central differences ``(f(p + eps) - f(p - eps)) / (2 eps)`` per coordinate.

    ``f`` is evaluated with the group's tensors perturbed in place; values are
    restored afterwards.
    """
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    out = []
    for t in params.tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(params))
            flat[i] = orig - eps
            fm = float(f(params))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        out.append(g)
    return out
