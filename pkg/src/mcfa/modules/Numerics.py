"""
Dense tensor math with reverse-mode gradients over a fixed op set.

Every differentiable op takes an optional ``tape``. When a tape is given and
any input requires a gradient, the op is recorded so that ``backward`` can
replay the recorded ops in reverse order. Ops never mutate their inputs.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt


FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

BackwardFn = Callable[[FloatArray], Sequence[FloatArray | None]]


class DimensionError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"


class Tensor:
    """
    A float64 array plus the bookkeeping the tape needs.

    Parameters are tensors created with ``requires_grad=True`` and a unique
    ``name``; ``backward`` reports gradients by that name.
    """

    __slots__ = ("name", "requires_grad", "values")

    def __init__(
        self, values: Any, name: str = "", requires_grad: bool = False, copy: bool = True
    ) -> None:
        self.values: FloatArray = (
            np.array(values, dtype=np.float64) if copy else np.asarray(values, dtype=np.float64)
        )
        self.name = name
        self.requires_grad = requires_grad

    @classmethod
    def parameter(cls, values: Any, name: str) -> Tensor:
        return cls(values, name=name, requires_grad=True)

    @classmethod
    def zeros(cls, shape: Sequence[int], name: str = "", requires_grad: bool = False) -> Tensor:
        return cls(np.zeros(tuple(shape)), name=name, requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def ndim(self) -> int:
        return int(self.values.ndim)

    def item(self) -> float:
        if self.values.size != 1:
            raise DimensionError(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def copy(self) -> Tensor:
        return Tensor(self.values.copy(), name=self.name, requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        label = f"name={self.name!r}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class GradTape:
    """Ordered record of executed ops. One tape per training step, never shared."""

    entries: list[TapeEntry] = field(default_factory=list)

    def record(
        self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn
    ) -> None:
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class GradResult:
    grads: dict[str, FloatArray]
    # Parameters that the loss does not reach; their gradient is zero.
    missing: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> FloatArray:
        return self.grads[name]


# --- helpers ---


def _check_finite(values: FloatArray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{op} produced a non-finite value")


def _finish(
    op: str,
    inputs: Sequence[Tensor],
    values: FloatArray,
    backward: BackwardFn,
    tape: GradTape | None,
) -> Tensor:
    _check_finite(values, op)
    out = Tensor(values, requires_grad=any(t.requires_grad for t in inputs), copy=False)
    if tape is not None and out.requires_grad:
        tape.record(op, inputs, out, backward)
    return out


def unbroadcast(grad: FloatArray, shape: tuple[int, ...]) -> FloatArray:
    """Sums ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def sigmoid_values(x: FloatArray) -> FloatArray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_values(x: FloatArray, axis: int = -1) -> FloatArray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    result: FloatArray = ex / np.sum(ex, axis=axis, keepdims=True)
    return result


# --- ops ---


def matmul(
    a: Tensor, b: Tensor, tape: GradTape | None = None, transpose_b: bool = False
) -> Tensor:
    """
    Matrix product ``a @ b`` (or ``a @ b.T``).

    ``a`` may carry leading batch axes; ``b`` is always a matrix.
    """
    if b.ndim != 2 or a.ndim < 1:
        raise DimensionError(f"matmul needs a matrix on the right: {a.shape} x {b.shape}")
    bm = b.values.T if transpose_b else b.values
    k = a.shape[-1]
    if k != bm.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = a.values @ bm

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        ga = g @ bm.T
        if a.ndim == 1:
            gbm = np.outer(a.values, g)
        else:
            gbm = a.values.reshape(-1, k).T @ g.reshape(-1, bm.shape[1])
        return ga, (gbm.T if transpose_b else gbm)

    return _finish("matmul", (a, b), out, backward, tape)


def add(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    try:
        out = a.values + b.values
    except ValueError as ex:
        raise DimensionError(f"add cannot broadcast {a.shape} and {b.shape}") from ex

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _finish("add", (a, b), out, backward, tape)


def concat(tensors: Sequence[Tensor], axis: int = -1, tape: GradTape | None = None) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as ex:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat shapes disagree: {shapes}") from ex
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        return np.split(g, bounds, axis=axis)

    return _finish("concat", tuple(tensors), out, backward, tape)


def activation(
    x: Tensor, kind: Activation | str, tape: GradTape | None = None
) -> Tensor:
    kind = Activation(kind)
    _check_finite(x.values, f"{kind.value} input")
    if kind is Activation.SIGMOID:
        out = sigmoid_values(x.values)

        def backward(g: FloatArray) -> Sequence[FloatArray | None]:
            return (g * out * (1.0 - out),)

    elif kind is Activation.TANH:
        out = np.tanh(x.values)

        def backward(g: FloatArray) -> Sequence[FloatArray | None]:
            return (g * (1.0 - out * out),)

    else:
        active = x.values > 0
        out = np.where(active, x.values, 0.0)

        def backward(g: FloatArray) -> Sequence[FloatArray | None]:
            return (g * active,)

    return _finish(kind.value, (x,), out, backward, tape)


def softmax(x: Tensor, axis: int = -1, tape: GradTape | None = None) -> Tensor:
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax of an empty input, shape {x.shape}")
    out = softmax_values(x.values, axis=axis)

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _finish("softmax", (x,), out, backward, tape)


def broadcast_scale(
    v: Tensor, s: Tensor | float, tape: GradTape | None = None
) -> Tensor:
    """
    Multiplies ``v`` by a scalar, or by per-row scalars of shape ``(..., 1)``.
    """
    if not isinstance(s, Tensor):
        if not np.isfinite(s):
            raise NonFiniteError("broadcast_scale by a non-finite scalar")
        factor = float(s)
        out = v.values * factor

        def backward_const(g: FloatArray) -> Sequence[FloatArray | None]:
            return (g * factor,)

        return _finish("broadcast_scale", (v,), out, backward_const, tape)

    if s.size != 1 and (s.ndim != v.ndim or s.shape[-1] != 1):
        raise DimensionError(f"broadcast_scale needs a scalar per row: {v.shape} by {s.shape}")
    try:
        out = v.values * s.values
    except ValueError as ex:
        raise DimensionError(f"broadcast_scale cannot broadcast {v.shape} by {s.shape}") from ex

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        return unbroadcast(g * s.values, v.shape), unbroadcast(g * v.values, s.shape)

    return _finish("broadcast_scale", (v, s), out, backward, tape)


def hadamard(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"hadamard shapes differ: {a.shape} and {b.shape}")
    out = a.values * b.values

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        return g * b.values, g * a.values

    return _finish("hadamard", (a, b), out, backward, tape)


def max_over_time(
    x: Tensor,
    axis: int = -1,
    mask: BoolArray | None = None,
    tape: GradTape | None = None,
) -> Tensor:
    """
    Maximum along ``axis``; the gradient goes to the first arg-max only.

    ``mask`` (broadcastable to ``x``) marks the positions allowed to win.
    """
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"max_over_time over an empty axis, shape {x.shape}")
    values = x.values
    if mask is not None:
        mask = np.broadcast_to(mask, values.shape)
        if not np.all(np.any(mask, axis=axis)):
            raise DimensionError("max_over_time mask leaves a row without positions")
        values = np.where(mask, values, -np.inf)
    idx = np.expand_dims(np.argmax(values, axis=axis), axis)
    out = np.take_along_axis(x.values, idx, axis=axis).squeeze(axis)

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        gx = np.zeros_like(x.values)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _finish("max_over_time", (x,), out, backward, tape)


def dropout(x: Tensor, mask: FloatArray, tape: GradTape | None = None) -> Tensor:
    """Applies a precomputed (already rescaled) dropout mask."""
    if mask.shape != x.shape:
        raise DimensionError(f"dropout mask {mask.shape} does not match {x.shape}")
    out = x.values * mask

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        return (g * mask,)

    return _finish("dropout", (x,), out, backward, tape)


def cross_entropy(probs: Tensor, labels: IntArray, tape: GradTape | None = None) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-wise probabilities."""
    if probs.ndim != 2 or probs.shape[0] != len(labels):
        raise DimensionError(f"cross_entropy: probs {probs.shape} for {len(labels)} labels")
    rows = np.arange(len(labels))
    picked = probs.values[rows, labels]
    with np.errstate(divide="ignore"):
        out = np.asarray(-np.mean(np.log(picked)))
    n = float(len(labels))

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        gp = np.zeros_like(probs.values)
        gp[rows, labels] = -g / (n * picked)
        return (gp,)

    return _finish("cross_entropy", (probs,), out, backward, tape)


def gather_rows(table: Tensor, ids: IntArray, tape: GradTape | None = None) -> Tensor:
    """Embedding lookup: ``table[ids]`` for an integer array of any shape."""
    if table.ndim != 2:
        raise DimensionError(f"gather_rows needs a matrix, got {table.shape}")
    out = table.values[ids]

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids, g)
        return (gt,)

    return _finish("gather_rows", (table,), out, backward, tape)


def unfold(x: Tensor, width: int, tape: GradTape | None = None) -> Tensor:
    """
    Stacks every run of ``width`` consecutive rows: ``(..., L, d)`` becomes
    ``(..., L - width + 1, width * d)``.
    """
    if x.ndim < 2:
        raise DimensionError(f"unfold needs (..., L, d), got {x.shape}")
    length, dim = x.shape[-2], x.shape[-1]
    if length < width:
        raise DimensionError(f"sequence length {length} is shorter than window {width}")
    steps = length - width + 1
    out = np.concatenate([x.values[..., o : o + steps, :] for o in range(width)], axis=-1)

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        gx = np.zeros_like(x.values)
        for o in range(width):
            gx[..., o : o + steps, :] += g[..., o * dim : (o + 1) * dim]
        return (gx,)

    return _finish("unfold", (x,), out, backward, tape)


def take(x: Tensor, index: int, axis: int = -1, tape: GradTape | None = None) -> Tensor:
    """Selects one slice along ``axis``, keeping the axis with length 1."""
    n = x.shape[axis]
    if not -n <= index < n:
        raise DimensionError(f"take index {index} out of range for axis of size {n}")
    index %= n
    slicer: list[slice] = [slice(None)] * x.ndim
    slicer[axis] = slice(index, index + 1)
    key = tuple(slicer)
    out = x.values[key]

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        gx = np.zeros_like(x.values)
        gx[key] = g
        return (gx,)

    return _finish("take", (x,), out, backward, tape)


def total(x: Tensor, tape: GradTape | None = None) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = np.asarray(np.sum(x.values))

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        return (np.full_like(x.values, float(g)),)

    return _finish("sum", (x,), out, backward, tape)


def squared_norm(x: Tensor, tape: GradTape | None = None) -> Tensor:
    out = np.asarray(np.sum(x.values * x.values))

    def backward(g: FloatArray) -> Sequence[FloatArray | None]:
        return (2.0 * float(g) * x.values,)

    return _finish("squared_norm", (x,), out, backward, tape)


# --- reverse pass ---


def backward(tape: GradTape, loss: Tensor, params: Iterable[Tensor]) -> GradResult:
    """
    Exact reverse-mode gradients of ``loss`` for every tensor in ``params``.

    Parameters the loss does not depend on get a zero gradient and are listed
    in ``GradResult.missing``.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    adjoints: dict[int, FloatArray] = {id(loss): np.ones_like(loss.values)}
    for entry in reversed(tape.entries):
        g = adjoints.pop(id(entry.output), None)
        if g is None:
            continue
        for inp, ig in zip(entry.inputs, entry.backward(g), strict=True):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoints:
                adjoints[key] = adjoints[key] + ig
            else:
                adjoints[key] = np.array(ig, dtype=np.float64)

    result = GradResult(grads={})
    for p in params:
        if p.name in result.grads:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        g = adjoints.get(id(p))
        if g is None:
            result.missing.append(p.name)
            g = np.zeros_like(p.values)
        result.grads[p.name] = g.reshape(p.shape)
    return result


# --- optimisation ---


@dataclass
class AdadeltaState:
    sq_grad: FloatArray
    sq_delta: FloatArray
    rho: float = 0.95
    epsilon: float = 1e-6

    @classmethod
    def for_parameter(cls, param: Tensor, rho: float = 0.95, epsilon: float = 1e-6) -> AdadeltaState:
        if not 0.0 < rho < 1.0:
            raise ValueError(f"Adadelta rho must lie in (0, 1), got {rho}")
        if epsilon <= 0.0:
            raise ValueError(f"Adadelta epsilon must be positive, got {epsilon}")
        return cls(np.zeros_like(param.values), np.zeros_like(param.values), rho, epsilon)


def adadelta_step(param: Tensor, grad: FloatArray, state: AdadeltaState) -> FloatArray:
    """
    One Adadelta update, applied in place to ``param`` and ``state``.

    Returns the applied delta.
    """
    if grad.shape != param.shape or state.sq_grad.shape != param.shape:
        raise DimensionError(f"adadelta_step: param {param.shape}, grad {grad.shape}")
    _check_finite(grad, f"gradient of {param.name or 'parameter'}")
    rho, eps = state.rho, state.epsilon
    state.sq_grad = rho * state.sq_grad + (1.0 - rho) * grad * grad
    delta = -(np.sqrt(state.sq_delta + eps) / np.sqrt(state.sq_grad + eps)) * grad
    state.sq_delta = rho * state.sq_delta + (1.0 - rho) * delta * delta
    param.values = param.values + delta
    return delta


def sgd_step(param: Tensor, grad: FloatArray, learning_rate: float) -> FloatArray:
    if grad.shape != param.shape:
        raise DimensionError(f"sgd_step: param {param.shape}, grad {grad.shape}")
    _check_finite(grad, f"gradient of {param.name or 'parameter'}")
    delta = -learning_rate * grad
    param.values = param.values + delta
    return delta


class Adadelta:
    """Keeps one ``AdadeltaState`` per named parameter."""

    def __init__(self, params: Mapping[str, Tensor], rho: float = 0.95, epsilon: float = 1e-6):
        self.params = dict(params)
        self.states = {
            name: AdadeltaState.for_parameter(p, rho, epsilon) for name, p in self.params.items()
        }

    def step(self, grads: Mapping[str, FloatArray]) -> None:
        for name, param in self.params.items():
            if name in grads:
                adadelta_step(param, grads[name], self.states[name])


def max_norm_rescale(w: FloatArray, c: float) -> FloatArray:
    """
    Scales every row whose L2 norm exceeds ``c`` back to norm ``c``.

    Rows already within ``c`` plus a rounding margin are left bit-identical,
    which keeps the operation idempotent.
    """
    if c <= 0:
        raise ValueError(f"max-norm bound must be positive, got {c}")
    w = np.asarray(w, dtype=np.float64)
    norms = np.sqrt(np.sum(w * w, axis=-1, keepdims=True))
    over = norms > c + 1e-13
    safe = np.where(over, norms, 1.0)
    return np.where(over, w * (c / safe), w)


# --- initialisation and checking ---


def glorot_uniform(
    rng: np.random.Generator, shape: tuple[int, int], fan_in: int | None = None, fan_out: int | None = None
) -> FloatArray:
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = shape[1] if fan_out is None else fan_out
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def make_dropout_mask(
    shape: tuple[int, ...], rate: float, rng: np.random.Generator
) -> FloatArray:
    """Inverted dropout mask: kept units are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def finite_difference_gradient(
    loss_fn: Callable[[], float], param: Tensor, h: float = 1e-5
) -> FloatArray:
    """Central differences of ``loss_fn`` with respect to every entry of ``param``."""
    grad = np.zeros_like(param.values)
    flat = param.values.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = loss_fn()
        flat[i] = original - h
        minus = loss_fn()
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(a: FloatArray, b: FloatArray, floor: float = 1e-7) -> float:
    """Largest elementwise ``|a - b| / (|a| + |b|)``, floored to ignore values near zero."""
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
