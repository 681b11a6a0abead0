"""Minimal dense-tensor arithmetic with reverse-mode differentiation.

Everything is float64. A closed op set is recorded on an explicit Tape;
backward walks the tape in exact reverse execution order and accumulates
gradients (never overwrites). No general autodiff is attempted: the op
set covers affine layers, activations, set max-pooling, FiLM modulation,
MSE losses and gradient reversal, which is everything the networks need.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "silu",
    "sin",
    "cos",
    "concat",
    "max_pool",
    "reshape",
    "mse",
    "gradient_reversal",
    "no_tape",
]


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class Tensor:
    """A dense float64 array plus an accumulated gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A named leaf tensor whose gradient persists between backward calls."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


# ---------------------------------------------------------------------------
# Tape

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Records ops in execution order; backward replays them reversed.

    Use as a context manager::

        with Tape() as tape:
            loss = mse(model(x), y)
        tape.backward(loss)
    """

    def __init__(self):
        # each node: (backward_fn, output_tensor)
        self.nodes: list[tuple] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, backward_fn, out: Tensor) -> None:
        self.nodes.append((backward_fn, out))

    def backward(self, loss: Tensor) -> None:
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        loss.grad = np.ones_like(loss.data)
        for backward_fn, out in reversed(self.nodes):
            if out.grad is None:
                continue
            backward_fn(out.grad)


class no_tape:
    """Context that suspends recording (inference mode)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def _active_tape():
    if _TAPE_STACK and _TAPE_STACK[-1] is not None:
        return _TAPE_STACK[-1]
    return None


def _finish(kind: str, out_data: np.ndarray, backward_fn) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op {kind!r} produced non-finite values")
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        tape.record(backward_fn, out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over axes that were broadcast to reach its shape from `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b with b a 2-D weight matrix; a may carry leading batch axes."""
    if b.data.ndim != 2 or a.data.ndim < 1 or a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}"
        )
    a_data, b_data = a.data, b.data
    out_data = a_data @ b_data

    def backward(g):
        a.accumulate(g @ b_data.T)
        lead = a_data.reshape(-1, a_data.shape[-1])
        b.accumulate(lead.T @ g.reshape(-1, g.shape[-1]))

    return _finish("matmul", out_data, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; numpy broadcasting allowed (covers broadcast-add)."""
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.data.shape} + {b.data.shape}")

    def backward(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    return _finish("add", out_data, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.data.shape} - {b.data.shape}")

    def backward(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(-g, b.data.shape))

    return _finish("sub", out_data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting (FiLM scaling)."""
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.data.shape} * {b.data.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        a.accumulate(_unbroadcast(g * b_data, a_data.shape))
        b.accumulate(_unbroadcast(g * a_data, b_data.shape))

    return _finish("mul", out_data, backward)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar constant."""
    s = float(s)

    def backward(g):
        a.accumulate(g * s)

    return _finish("scale", a.data * s, backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward(g):
        a.accumulate(g * mask)

    return _finish("relu", a.data * mask, backward)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * sig

    def backward(g):
        a.accumulate(g * (sig * (1.0 + a.data * (1.0 - sig))))

    return _finish("silu", out_data, backward)


def sin(a: Tensor) -> Tensor:
    cos_a = np.cos(a.data)

    def backward(g):
        a.accumulate(g * cos_a)

    return _finish("sin", np.sin(a.data), backward)


def cos(a: Tensor) -> Tensor:
    sin_a = np.sin(a.data)

    def backward(g):
        a.accumulate(-g * sin_a)

    return _finish("cos", np.cos(a.data), backward)


def concat(tensors: list, axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    shapes = [t.data.shape for t in tensors]
    base = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(base) or any(
            i != (axis % len(base)) and s[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [s[axis] for s in shapes]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = np.split(g, offsets[1:-1], axis=axis)
        for t, piece in zip(tensors, pieces):
            t.accumulate(piece)

    return _finish("concat", out_data, backward)


def max_pool(a: Tensor, axis: int) -> Tensor:
    """Max over one axis. Backward routes to the first maximal index on ties."""
    if a.data.shape[axis] < 1:
        raise ShapeError(f"max-pool: empty axis {axis} in shape {a.data.shape}")
    out_data = a.data.max(axis=axis)
    argmax = a.data.argmax(axis=axis)  # first maximal index on ties

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(
            full, np.expand_dims(argmax, axis), np.expand_dims(g, axis), axis
        )
        a.accumulate(full)

    return _finish("max-pool", out_data, backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    in_shape = a.data.shape

    def backward(g):
        a.accumulate(g.reshape(in_shape))

    return _finish("reshape", out_data, backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all entries; returns a scalar tensor."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse: shape mismatch {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size
    out_data = np.asarray((diff * diff).sum() / n)

    def backward(g):
        gd = (2.0 / n) * diff * g
        pred.accumulate(gd)
        target.accumulate(-gd)

    return _finish("mse", out_data, backward)


def gradient_reversal(a: Tensor, strength: float) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -strength."""
    if strength < 0.0:
        raise ValueError(f"gradient_reversal: strength must be >= 0, got {strength}")
    s = float(strength)

    def backward(g):
        a.accumulate(-s * g)

    return _finish("gradient-reversal", a.data.copy(), backward)


def constant(data) -> Tensor:
    """A tensor that participates in ops but is never differentiated through."""
    t = Tensor(data)
    return t
