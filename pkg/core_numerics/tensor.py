"""
Core Tensor Engine for the Inpainting Encoder
Dense float64 tensors with exact reverse-mode gradients.

Every operation validates its input extents, computes the forward value with
NumPy and registers a closure that pushes the output gradient back onto its
inputs. Calling ``backward()`` on a scalar walks the recorded graph in reverse
topological order.

Key Characteristics:
1. Row-major float64 storage, no implicit broadcasting beyond bias suffixes
2. One closure per operation, gradients accumulate into ``Tensor.grad``
3. ``no_grad()`` skips graph recording for inference
4. ``grad_check`` compares analytic gradients with central differences
"""

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core_numerics.errors import ConfigError, DataError, ShapeError

PROB_FLOOR = 1e-12
LOG_PROB_FLOOR = math.log(PROB_FLOOR)
GELU_C = math.sqrt(2.0 / math.pi)

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the current thread."""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match tensor shape {self.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate gradients from this tensor to every recorded ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without a seed needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)

        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    tracked = _grad_enabled() and any(
        p.requires_grad or p._parents for p in parents
    )
    if not tracked:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


# -----------------------------------------------------------------------------
# Linear algebra
# -----------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """C = A·B over the last two axes; leading axes must agree or B is 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} · {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul leading extents differ: {a.shape} · {b.shape}")

    out_data = np.matmul(a.data, b.data)

    def backward(grad: np.ndarray) -> None:
        if _needs_grad(a):
            a._accumulate(np.matmul(grad, np.swapaxes(b.data, -1, -2)))
        if _needs_grad(b):
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
            if grad_b.ndim > b.ndim:
                grad_b = grad_b.reshape(-1, *b.shape).sum(axis=0)
            b._accumulate(grad_b)

    return _result(out_data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may match a trailing suffix of ``a`` (biases, positions)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        if b.ndim > a.ndim or a.shape[a.ndim - b.ndim:] != b.shape:
            raise ShapeError(f"add cannot align {a.shape} with {b.shape}")

    out_data = a.data + b.data

    def backward(grad: np.ndarray) -> None:
        if _needs_grad(a):
            a._accumulate(grad)
        if _needs_grad(b):
            b._accumulate(grad.reshape(-1, *b.shape).sum(axis=0) if b.shape != grad.shape else grad)

    return _result(out_data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a constant scalar."""
    a = _as_tensor(a)
    factor = float(factor)

    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad * factor)

    return _result(a.data * factor, (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    try:
        out_data = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from exc

    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad.reshape(a.shape))

    return _result(out_data, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"invalid permutation {axes} for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(grad: np.ndarray) -> None:
        a._accumulate(np.transpose(grad, inverse))

    return _result(np.transpose(a.data, axes), (a,), backward)


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    a = _as_tensor(a)

    def backward(grad: np.ndarray) -> None:
        a._accumulate(np.broadcast_to(grad, a.shape).astype(np.float64))

    return _result(np.asarray(a.data.sum()), (a,), backward)


# -----------------------------------------------------------------------------
# Nonlinearities and normalization
# -----------------------------------------------------------------------------


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (max subtracted before exponentiation)."""
    v = _as_tensor(v)
    if v.ndim == 0 or v.shape[axis] < 1:
        raise ShapeError(f"softmax needs a non-empty axis, got shape {v.shape}")
    shifted = v.data - v.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out_data = exps / exps.sum(axis=axis, keepdims=True)

    def backward(grad: np.ndarray) -> None:
        inner = (grad * out_data).sum(axis=axis, keepdims=True)
        v._accumulate(out_data * (grad - inner))

    return _result(out_data, (v,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each last-axis slice, then apply gamma/beta."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1] if x.ndim else 0
    if d < 1 or gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps < 0:
        raise ShapeError(f"layer_norm: eps must be non-negative, got {eps}")

    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out_data = x_hat * gamma.data + beta.data

    def backward(grad: np.ndarray) -> None:
        if _needs_grad(x):
            g_hat = grad * gamma.data
            mean_g = g_hat.mean(axis=-1, keepdims=True)
            mean_gx = (g_hat * x_hat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (g_hat - mean_g - x_hat * mean_gx))
        if _needs_grad(gamma):
            gamma._accumulate((grad * x_hat).reshape(-1, d).sum(axis=0))
        if _needs_grad(beta):
            beta._accumulate(grad.reshape(-1, d).sum(axis=0))

    return _result(out_data, (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = _as_tensor(x)
    inner = GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    out_data = 0.5 * x.data * (1.0 + t)

    def backward(grad: np.ndarray) -> None:
        d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x.data ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner
        x._accumulate(grad * local)

    return _result(out_data, (x,), backward)


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[indices[...], :]."""
    table = _as_tensor(table)
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise DataError(f"embedding indices must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DataError(
            f"embedding index out of range [0, {table.shape[0]}): "
            f"min {idx.min()}, max {idx.max()}"
        )

    def backward(grad: np.ndarray) -> None:
        grad_table = np.zeros_like(table.data)
        np.add.at(grad_table, idx.reshape(-1), grad.reshape(-1, table.shape[1]))
        table._accumulate(grad_table)

    return _result(table.data[idx], (table,), backward)


def dropout(
    x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool
) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    x = _as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(grad: np.ndarray) -> None:
        x._accumulate(grad * keep)

    return _result(x.data * keep, (x,), backward)


# -----------------------------------------------------------------------------
# Losses
# -----------------------------------------------------------------------------


def _loss_weights(labels: np.ndarray, weights: Optional[np.ndarray]) -> np.ndarray:
    if weights is None:
        return np.full(labels.shape, 1.0 / max(labels.size, 1))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != labels.shape:
        raise ShapeError(f"loss weights {w.shape} do not match labels {labels.shape}")
    return w


def _check_labels(labels: np.ndarray, leading: Tuple[int, ...], classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != leading:
        raise ShapeError(f"labels {labels.shape} do not match positions {leading}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be integer class indices, got {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(
            f"label out of range [0, {classes}): min {labels.min()}, max {labels.max()}"
        )
    return labels


def cross_entropy(
    dist: Tensor, labels: np.ndarray, weights: Optional[np.ndarray] = None
) -> Tensor:
    """
    Cross-entropy of row-stochastic distributions against class labels.

    Returns -Σ w_o·log(max(d[o, label(o)], 1e-12)); the default weights are
    1/N, i.e. the mean over positions.
    """
    dist = _as_tensor(dist)
    if dist.ndim < 2:
        raise ShapeError(f"cross_entropy needs [..., C] distributions, got {dist.shape}")
    classes = dist.shape[-1]
    labels = _check_labels(labels, dist.shape[:-1], classes)
    row_sums = dist.data.sum(axis=-1)
    if not np.allclose(row_sums, 1.0, atol=1e-6) or np.any(dist.data < 0):
        raise DataError("cross_entropy: rows must be non-negative and sum to 1")
    w = _loss_weights(labels, weights)

    flat = dist.data.reshape(-1, classes)
    flat_labels = labels.reshape(-1)
    picked = flat[np.arange(flat.shape[0]), flat_labels]
    floored = np.maximum(picked, PROB_FLOOR)
    out_data = np.asarray(-(w.reshape(-1) * np.log(floored)).sum())

    def backward(grad: np.ndarray) -> None:
        grad_flat = np.zeros_like(flat)
        live = picked > PROB_FLOOR
        rows = np.arange(flat.shape[0])[live]
        grad_flat[rows, flat_labels[live]] = -w.reshape(-1)[live] / picked[live]
        dist._accumulate(float(grad) * grad_flat.reshape(dist.shape))

    return _result(out_data, (dist,), backward)


def softmax_cross_entropy(
    logits: Tensor, labels: np.ndarray, weights: Optional[np.ndarray] = None
) -> Tensor:
    """Fused softmax + cross-entropy in log-sum-exp form, same floor as above."""
    logits = _as_tensor(logits)
    if logits.ndim < 2:
        raise ShapeError(f"softmax_cross_entropy needs [..., C] logits, got {logits.shape}")
    classes = logits.shape[-1]
    labels = _check_labels(labels, logits.shape[:-1], classes)
    w = _loss_weights(labels, weights).reshape(-1)

    flat = logits.data.reshape(-1, classes)
    flat_labels = labels.reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    picked = log_probs[np.arange(flat.shape[0]), flat_labels]
    live = picked > LOG_PROB_FLOOR
    nll = -np.where(live, picked, LOG_PROB_FLOOR)
    out_data = np.asarray((w * nll).sum())

    def backward(grad: np.ndarray) -> None:
        probs = np.exp(log_probs)
        probs[np.arange(flat.shape[0]), flat_labels] -= 1.0
        probs *= (w * live)[:, None]
        logits._accumulate(float(grad) * probs.reshape(logits.shape))

    return _result(out_data, (logits,), backward)


# -----------------------------------------------------------------------------
# Gradient checking
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    """Worst-case disagreement between analytic and finite-difference gradients."""

    max_abs_err: float
    max_rel_err: float
    worst_index: int
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def passed(self, tol: float) -> bool:
        return self.ok and self.max_rel_err <= tol


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    analytic: Optional[np.ndarray] = None,
    floor: float = 1e-8,
) -> GradCheckReport:
    """
    Compare the gradient of scalar ``f`` at ``x`` with central differences.

    The relative error per coordinate is |a − n| / max(|a|, |n|, floor).
    ``analytic`` overrides the backward-pass gradient (used to test the checker).
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.item()):
        return GradCheckReport(float("inf"), float("inf"), 0, "non-finite f(x) at the base point")

    if analytic is None:
        out.backward()
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(analytic)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = f(x).item()
        flat[i] = original - h
        f_minus = f(x).item()
        flat[i] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            return GradCheckReport(
                float("inf"), float("inf"), i, f"non-finite f(x ± h·e_{i}) at flat index {i}"
            )
        numeric[i] = (f_plus - f_minus) / (2.0 * h)
    x.zero_grad()

    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel_err = abs_err / denom
    worst = int(np.argmax(rel_err)) if rel_err.size else 0
    return GradCheckReport(
        max_abs_err=float(abs_err.max(initial=0.0)),
        max_rel_err=float(rel_err.max(initial=0.0)),
        worst_index=worst,
    )
