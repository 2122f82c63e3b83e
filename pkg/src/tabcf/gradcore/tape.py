"""Reverse-mode automatic differentiation over an explicit op tape.

All arithmetic is float64 numpy. A ``Tape`` records every differentiable op
executed while it is active; ``differentiate`` replays the records in reverse
to accumulate exact gradients. Ops executed with no active tape are plain
eager numpy (evaluation mode).

The op vocabulary is closed: anything not in ``SUPPORTED_OPS`` is rejected at
record time, never at backward time.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

SUPPORTED_OPS = frozenset({
    "affine", "masked_affine",
    "add", "sub", "mul", "scale",
    "relu", "tanh", "sigmoid", "exp", "sqrt",
    "batchnorm", "dropout",
    "softmax", "softmax_cross_entropy", "logsumexp",
    "sq_l2", "l1", "hinge",
    "sum", "mean",
    "concat", "select_rows", "slice_cols",
})

_uid_counter = itertools.count()


class GradError(ValueError):
    """Raised for malformed gradients or unsupported op records."""


class Tensor:
    """A float64 array node. Leaf tensors with ``requires_grad`` are parameters."""

    __slots__ = ("data", "uid", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.uid = next(_uid_counter)
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = self.name or f"t{self.uid}"
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as constant tensors
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def item(self) -> float:
        return float(self.data)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: tuple, output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of ops; gradients replay it exactly once in reverse."""

    def __init__(self):
        self.records: list[Record] = []

    def record(self, op: str, inputs: tuple, output: Tensor, backward) -> None:
        if op not in SUPPORTED_OPS:
            raise GradError(f"unsupported op kind {op!r}")
        self.records.append(Record(op, inputs, output, backward))

    def __enter__(self) -> "Tape":
        _push_tape(self)
        return self

    def __exit__(self, *exc) -> None:
        _pop_tape(self)


_tape_stack: list[Tape] = []


def _push_tape(tape: Tape) -> None:
    _tape_stack.append(tape)


def _pop_tape(tape: Tape) -> None:
    if not _tape_stack or _tape_stack[-1] is not tape:
        raise GradError("tape stack corrupted: exiting a tape that is not active")
    _tape_stack.pop()


def active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


def _emit(op: str, out_data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Create the output tensor, recording the op if a tape is active and
    any input is on the gradient path."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = active_tape()
    if tape is not None and needs:
        tape.record(op, inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit("add", out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit("sub", out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * b_data, a_data.shape),
                _unbroadcast(g * a_data, b_data.shape))

    return _emit("mul", out, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return _emit("scale", x.data * c, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0  # subgradient 0 at the kink

    def backward(g):
        return (g * mask,)

    return _emit("relu", out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _emit("tanh", out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", out, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _emit("exp", out, (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise GradError("sqrt of negative value")
    out = np.sqrt(x.data)

    def backward(g):
        return (g / (2.0 * np.maximum(out, 1e-300)),)

    return _emit("sqrt", out, (x,), backward)


def hinge(a: Tensor, b: Tensor) -> Tensor:
    """max(a - b, 0), gradient 0 on the flat side and at the kink."""
    diff = a.data - b.data
    out = np.maximum(diff, 0.0)
    active = diff > 0.0

    def backward(g):
        ga = g * active
        return _unbroadcast(ga, a.data.shape), _unbroadcast(-ga, b.data.shape)

    return _emit("hinge", out, (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra

def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x (B, in), w (in, out), b (out,)."""
    out = x.data @ w.data + b.data
    x_data, w_data = x.data, w.data

    def backward(g):
        return g @ w_data.T, x_data.T @ g, g.sum(axis=0)

    return _emit("affine", out, (x, w, b), backward)


def masked_affine(x: Tensor, w: Tensor, b: Tensor, mask: np.ndarray) -> Tensor:
    """Affine through a fixed binary connectivity mask on the weights."""
    wm = w.data * mask
    out = x.data @ wm + b.data
    x_data = x.data

    def backward(g):
        return g @ wm.T, (x_data.T @ g) * mask, g.sum(axis=0)

    return _emit("masked_affine", out, (x, w, b), backward)


# ---------------------------------------------------------------------------
# normalization / regularization

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: "BatchNormState",
              training: bool, update_running: bool | None = None) -> Tensor:
    """Feature-wise batch normalization of a (B, F) tensor.

    Train mode normalizes by batch statistics (population variance) and folds
    them into the running estimates; eval mode uses the running estimates.
    ``update_running=False`` keeps train-mode normalization but leaves the
    running estimates untouched (for auxiliary forward passes whose batches
    should not skew the inference statistics).
    """
    eps = state.eps
    if update_running is None:
        update_running = training
    if training:
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if update_running:
            state.running_mean = ((1.0 - state.momentum) * state.running_mean
                                  + state.momentum * mean)
            state.running_var = ((1.0 - state.momentum) * state.running_var
                                 + state.momentum * var)
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data
    gamma_data = gamma.data

    if training:
        def backward(g):
            dbeta = g.sum(axis=0)
            dgamma = (g * xhat).sum(axis=0)
            dxhat = g * gamma_data
            dx = inv_std * (dxhat - dxhat.mean(axis=0)
                            - xhat * (dxhat * xhat).mean(axis=0))
            return dx, dgamma, dbeta
    else:
        def backward(g):
            dbeta = g.sum(axis=0)
            dgamma = (g * xhat).sum(axis=0)
            dx = g * gamma_data * inv_std
            return dx, dgamma, dbeta

    return _emit("batchnorm", out, (x, gamma, beta), backward)


class BatchNormState:
    """Running statistics buffer shared between train and eval passes."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = momentum
        self.eps = eps


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a caller-supplied (counter-based) generator."""
    if not 0.0 <= rate < 1.0:
        raise GradError(f"dropout rate {rate} outside [0, 1)")
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep) / keep

    def backward(g):
        return (g * mask,)

    return _emit("dropout", x.data * mask, (x,), backward)


# ---------------------------------------------------------------------------
# softmax family (numerically stable)

def _softmax_data(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    s = _softmax_data(x.data)

    def backward(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _emit("softmax", s, (x,), backward)


def logsumexp(x: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a (B, K) tensor -> (B,)."""
    m = x.data.max(axis=1, keepdims=True)
    out = (m + np.log(np.exp(x.data - m).sum(axis=1, keepdims=True)))[:, 0]
    s = _softmax_data(x.data)

    def backward(g):
        return (s * g[:, None],)

    return _emit("logsumexp", out, (x,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Fused stable CE per row: lse(z) - z[label]. Returns a (B,) tensor."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]
    rows = np.arange(z.shape[0])
    out = lse - z[rows, labels]
    s = _softmax_data(z)

    def backward(g):
        dz = s * g[:, None]
        dz[rows, labels] -= g
        return (dz,)

    return _emit("softmax_cross_entropy", out, (logits,), backward)


# ---------------------------------------------------------------------------
# reductions and norms

def _reduce_backward_shape(g: np.ndarray, shape: tuple, axis, keepdims: bool):
    if axis is None or keepdims:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def backward(g):
        return (_reduce_backward_shape(np.asarray(g), shape, axis, keepdims).copy(),)

    return _emit("sum", out, (x,), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    shape = x.data.shape
    count = x.data.size if axis is None else shape[axis]

    def backward(g):
        return (_reduce_backward_shape(np.asarray(g), shape, axis, keepdims) / count,)

    return _emit("mean", out, (x,), backward)


def sq_l2(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum of squares, optionally along one axis."""
    out = (x.data * x.data).sum(axis=axis, keepdims=keepdims)
    x_data, shape = x.data, x.data.shape

    def backward(g):
        return (2.0 * x_data
                * _reduce_backward_shape(np.asarray(g), shape, axis, keepdims),)

    return _emit("sq_l2", out, (x,), backward)


def l1(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum of absolute values; subgradient 0 at 0."""
    out = np.abs(x.data).sum(axis=axis, keepdims=keepdims)
    sign, shape = np.sign(x.data), x.data.shape

    def backward(g):
        return (sign * _reduce_backward_shape(np.asarray(g), shape, axis, keepdims),)

    return _emit("l1", out, (x,), backward)


# ---------------------------------------------------------------------------
# structural ops

def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [t.data for t in tensors]
    out = np.concatenate(parts, axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _emit("concat", out, tuple(tensors), backward)


def select_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]
    shape = x.data.shape

    def backward(g):
        dx = np.zeros(shape)
        np.add.at(dx, idx, g)
        return (dx,)

    return _emit("select_rows", out, (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[:, start:stop].copy()
    shape = x.data.shape

    def backward(g):
        dx = np.zeros(shape)
        dx[:, start:stop] = g
        return (dx,)

    return _emit("slice_cols", out, (x,), backward)


# ---------------------------------------------------------------------------
# backward pass

def differentiate(tape: Tape, loss: Tensor, params: Sequence[Tensor]) -> dict:
    """Exact reverse-mode gradients of a scalar loss for the given parameters.

    Parameters that do not appear in the loss get zero gradients. Returns a
    dict keyed by parameter tensor.
    """
    if loss.data.shape != ():
        raise GradError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {loss.uid: np.asarray(1.0)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.uid, None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for tensor, ig in zip(rec.inputs, in_grads):
            if ig is None or not tensor.requires_grad:
                continue
            acc = grads.get(tensor.uid)
            grads[tensor.uid] = ig if acc is None else acc + ig
    return {p: Tensor(grads.get(p.uid, np.zeros_like(p.data))) for p in params}
