"""Float64 tensors with taped reverse-mode differentiation.

The encoder and survival heads are composed from a small set of primitives
(matmul, add, softmax, layernorm, ...). Each primitive computes its result
with plain numpy and, while a :class:`Tape` is active, records a pull-back
closure per input. ``backward`` then replays the tape once, in reverse
order, accumulating ``d loss / d parameter`` into each ``Parameter.grad``.

Recording is dynamic: a fresh tape is built on every training step, and a
primitive called with no active tape is just a numpy computation. All data
is float64.
"""

from __future__ import annotations

import numpy as np

from .errors import AllMasked, NotScalarLoss, ShapeMismatch

LAYERNORM_EPS = 1e-5


class Tensor:
    """Dense row-major float64 array plus (during backward) its gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor; its gradient buffer persists across steps."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications, replayable exactly once.

    Use as a context manager around the forward pass, then call
    ``tape.backward(loss)`` (or the module-level ``backward``).
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, list[tuple[Tensor, object]]]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        if self._spent:
            raise RuntimeError("tape already replayed; record a fresh forward pass")
        if loss.data.size != 1:
            raise NotScalarLoss(f"loss has shape {loss.data.shape}, expected scalar")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for out, pulls in reversed(self._entries):
            g = out.grad
            if g is None:
                continue
            for tensor, pull in pulls:
                if not tensor.requires_grad:
                    continue
                contrib = pull(g)
                if tensor.grad is None:
                    tensor.grad = contrib
                else:
                    tensor.grad = tensor.grad + contrib
        self._entries.clear()


def backward(record: Tape, loss: Tensor) -> None:
    record.backward(loss)


def _emit(data: np.ndarray, pulls: list[tuple[Tensor, object]]) -> Tensor:
    needs = any(t.requires_grad for t, _ in pulls)
    out = Tensor(data, requires_grad=needs)
    if needs and _TAPE_STACK:
        _TAPE_STACK[-1]._entries.append((out, pulls))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 1 and b.data.ndim == 2:
        # vector @ matrix, e.g. a pooled feature row hitting a weight matrix
        if a.data.shape[0] != b.data.shape[0]:
            raise ShapeMismatch(
                f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
            )
        ad, bd = a.data, b.data
        return _emit(ad @ bd, [
            (a, lambda g: g @ bd.T),
            (b, lambda g: np.outer(ad, g)),
        ])
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul operands must have ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
        )
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape)),
        (b, lambda g: _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape)),
    ])


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _emit(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _emit(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    ad, bd = a.data, b.data
    return _emit(out, [
        (a, lambda g: _unbroadcast(g * bd, ad.shape)),
        (b, lambda g: _unbroadcast(g * ad, bd.shape)),
    ])


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit(a.data * c, [(a, lambda g: g * c)])


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    pos = a.data > 0.0
    return _emit(out, [(a, lambda g: g * pos)])


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return _emit(out, [(a, lambda g: g * out * (1.0 - out))])


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed stably; gradient is sigmoid(a)."""
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    sig = _sigmoid_np(a.data)
    return _emit(out, [(a, lambda g: g * sig)])


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    return _emit(out, [(a, lambda g: g / a.data)])


def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data * a.data, [(a, lambda g: g * 2.0 * a.data)])


def softmax_lastdim(a) -> Tensor:
    """Softmax over the last axis; subtracts the row max before exp."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def pull(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _emit(out, [(a, pull)])


def layernorm_lastdim(a, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no gain/bias)."""
    a = as_tensor(a)
    mean = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mean) * inv

    def pull(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return inv * (g - gm - xhat * gx)

    return _emit(xhat, [(a, pull)])


def masked_mean(x, mask) -> Tensor:
    """Mean of ``x`` rows over the second-to-last axis, restricted to
    positions where ``mask`` is 1. ``mask`` has the shape of ``x`` without
    its last axis; no gradient flows into it."""
    x, mask = as_tensor(x), as_tensor(mask)
    if mask.data.shape != x.data.shape[:-1]:
        raise ShapeMismatch(
            f"mask shape {mask.data.shape} does not match rows of {x.data.shape}"
        )
    m = mask.data
    counts = m.sum(axis=-1)
    if np.any(counts <= 0):
        raise AllMasked("masked_mean needs at least one unmasked position")
    out = (x.data * m[..., None]).sum(axis=-2) / counts[..., None]

    def pull(g):
        return g[..., None, :] * m[..., :, None] / counts[..., None, None]

    return _emit(out, [(x, pull)])


def transpose_last2(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim < 2:
        raise ShapeMismatch("transpose_last2 needs ndim >= 2")
    return _emit(a.data.swapaxes(-1, -2), [(a, lambda g: g.swapaxes(-1, -2))])


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _emit(np.asarray(a.data.sum()),
                 [(a, lambda g: np.broadcast_to(g, a.data.shape).copy())])


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _emit(np.asarray(a.data.mean()),
                 [(a, lambda g: np.broadcast_to(g / n, a.data.shape).copy())])


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "log": log,
    "square": square,
    "softmax_lastdim": softmax_lastdim,
    "layernorm_lastdim": layernorm_lastdim,
    "masked_mean": masked_mean,
    "transpose_last2": transpose_last2,
    "sum_all": sum_all,
    "mean_all": mean_all,
}


def primitive_forward(op: str, *inputs) -> Tensor:
    """Apply a primitive by name. Unknown names raise ShapeMismatch's
    sibling, KeyError, on purpose: the op table is closed."""
    return _PRIMITIVES[op](*inputs)


# ---------------------------------------------------------------------------
# Verification harness
# ---------------------------------------------------------------------------

def finite_difference_check(f, params, h: float = 1e-5) -> float:
    """Compare ``backward`` gradients of ``f()`` against central differences.

    ``f`` takes no arguments, reads the given parameters and returns a scalar
    Tensor. Returns the max relative error over every parameter coordinate,
    with denominator max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    zero_grads(params)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.ravel()
        ga_flat = ga.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            denom = max(abs(num), abs(ga_flat[i]), 1e-8)
            worst = max(worst, abs(num - ga_flat[i]) / denom)
    return worst
