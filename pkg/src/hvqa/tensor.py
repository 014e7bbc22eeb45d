"""Dense tensors with reverse-mode differentiation on an explicit tape.

Ops compute eagerly with numpy. While a :class:`Tape` is active, every op
whose output depends on a gradient-requiring input also records a backward
rule; the tape later replays those rules in reverse recording order to fill
gradient buffers. Recording order is execution order, so the reverse walk
is a valid topological order of the computation.

Values are float32 by default; pass float64 arrays (or ``dtype=np.float64``)
everywhere for gradient-check work, where float32 rounding drowns the
finite-difference signal. Any NaN or Inf produced by a forward op raises
:class:`NumericError` immediately instead of propagating.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

__all__ = [
    "DEFAULT_DTYPE",
    "NumericError",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "broadcast_to",
    "concat",
    "cross_entropy",
    "elementwise_product",
    "matmul",
    "one_hot",
    "parameter",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "tensor_sum",
    "tanh",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericError(ArithmeticError):
    """A forward result or a gradient contains NaN or Inf."""


class Tensor:
    """A dense numpy array plus an optional same-shape gradient buffer.

    Tensors are treated as immutable between forward and backward; the
    optimizer mutates ``data`` in place only at step boundaries.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_product(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


def parameter(data, dtype=None) -> Tensor:
    """A trainable leaf: requires grad and starts with a zero grad buffer."""
    t = Tensor(data, requires_grad=True, dtype=dtype)
    t.grad = np.zeros_like(t.data)
    return t


class _Recorded:
    __slots__ = ("inputs", "output", "rule")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor, rule: Callable):
        self.inputs = inputs
        self.output = output
        self.rule = rule


class Tape:
    """Ordered op record for one forward pass; single-owner, not shareable.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on the scalar loss. Each backward call adds into leaf
    ``grad`` buffers; gradients accumulate until the caller zeroes them.
    """

    _active: "Tape | None" = None

    def __init__(self):
        self._ops: list[_Recorded] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("a tape is already active; one step runs on one tape")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active = None

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ValueError("loss tensor was not produced under this tape")

        # Per-walk gradient flows keyed by tensor identity. Leaf buffers are
        # only touched at the end, so repeated backward calls add exact
        # copies of the same flow.
        flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}

        for op in reversed(self._ops):
            for inp in op.inputs:
                if inp.requires_grad and id(inp) not in holders:
                    holders[id(inp)] = inp
                    flows[id(inp)] = np.zeros_like(inp.data)
            upstream = flows.get(id(op.output))
            if upstream is None:
                continue
            grads = op.rule(upstream)
            for inp, g in zip(op.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                flows[id(inp)] = flows[id(inp)] + g

        for tid, t in holders.items():
            g = flows[tid]
            t.grad = g.copy() if t.grad is None else t.grad + g


def _record(inputs: tuple[Tensor, ...], output: Tensor, rule: Callable) -> None:
    tape = Tape._active
    if tape is not None and output.requires_grad:
        tape._ops.append(_Recorded(inputs, output, rule))
        tape._produced.add(id(output))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in result of {op}")


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], op: str, rule: Callable) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    _record(inputs, out, rule)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports 2D@2D, 2D@1D and 1D@2D operands."""
    A, B = a.data, b.data
    if A.ndim == 2 and B.ndim == 2:
        ok = A.shape[1] == B.shape[0]
    elif A.ndim == 2 and B.ndim == 1:
        ok = A.shape[1] == B.shape[0]
    elif A.ndim == 1 and B.ndim == 2:
        ok = A.shape[0] == B.shape[0]
    else:
        raise ShapeError(f"matmul needs matrix/vector operands, got shapes {a.shape} and {b.shape}")
    if not ok:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")

    def rule(up):
        if A.ndim == 2 and B.ndim == 2:
            return up @ B.T, A.T @ up
        if A.ndim == 2 and B.ndim == 1:
            return np.outer(up, B), A.T @ up
        return B @ up, np.outer(A, up)

    return _result(A @ B, (a, b), "matmul", rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), "add", lambda up: (up, up))


def elementwise_product(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of two identically shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"elementwise product: shapes {a.shape} and {b.shape} differ")
    A, B = a.data, b.data
    return _result(A * B, (a, b), "elementwise_product", lambda up: (up * B, up * A))


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(t.data * c, (t,), "scale", lambda up: (up * c,))


def broadcast_to(t: Tensor, shape: Sequence[int]) -> Tensor:
    """Materialized numpy-style broadcast; backward sums the widened axes."""
    shape = tuple(int(s) for s in shape)
    src = t.data.shape
    try:
        data = np.broadcast_to(t.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shape {src} to {shape}") from None

    def rule(up):
        g = up
        extra = g.ndim - len(src)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        squeezed = tuple(i for i, d in enumerate(src) if d == 1 and g.shape[i] != 1)
        if squeezed:
            g = g.sum(axis=squeezed, keepdims=True)
        return (g.reshape(src),)

    return _result(data, (t,), "broadcast_to", rule)


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"concat joins 1-D tensors, got shapes {a.shape} and {b.shape}")
    n = a.data.size
    return _result(np.concatenate([a.data, b.data]), (a, b), "concat",
                   lambda up: (up[:n], up[n:]))


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = t.data.shape
    return _result(t.data.reshape(shape), (t,), "reshape", lambda up: (up.reshape(src),))


def tensor_sum(t: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    src = t.data.shape
    dt = t.data.dtype
    return _result(np.asarray(t.data.sum(), dtype=dt), (t,), "sum",
                   lambda up: (np.broadcast_to(up, src).astype(dt, copy=True),))


def relu(t: Tensor) -> Tensor:
    X = t.data
    return _result(np.maximum(X, 0), (t,), "relu", lambda up: (up * (X > 0),))


def sigmoid(t: Tensor) -> Tensor:
    X = t.data
    out = np.empty_like(X)
    pos = X >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-X[pos]))
    ex = np.exp(X[~pos])
    out[~pos] = ex / (1.0 + ex)
    S = out
    return _result(out, (t,), "sigmoid", lambda up: (up * S * (1.0 - S),))


def tanh(t: Tensor) -> Tensor:
    T = np.tanh(t.data)
    return _result(T, (t,), "tanh", lambda up: (up * (1.0 - T * T),))


def softmax(t: Tensor) -> Tensor:
    """Probabilities over a 1-D tensor, computed with max subtraction."""
    if t.ndim != 1 or t.data.size < 1:
        raise ShapeError(f"softmax expects a non-empty 1-D tensor, got shape {t.shape}")
    if not np.isfinite(t.data).all():
        raise NumericError("softmax: non-finite input")
    e = np.exp(t.data - t.data.max())
    S = e / e.sum()

    def rule(up):
        return (S * (up - np.dot(up, S)),)

    return _result(S, (t,), "softmax", rule)


def one_hot(index: int, n: int, dtype=DEFAULT_DTYPE) -> Tensor:
    if not 0 <= index < n:
        raise ValueError(f"one-hot index {index} out of range for length {n}")
    v = np.zeros(n, dtype=dtype)
    v[index] = 1.0
    return Tensor(v)


def cross_entropy(p: Tensor, t: Tensor) -> Tensor:
    """Negative log likelihood of one-hot ``t`` under probabilities ``p``.

    This is the raw probability-space form. Training paths should prefer
    :func:`softmax_cross_entropy`, which fuses the log through the softmax.
    """
    if p.ndim != 1 or p.shape != t.shape:
        raise ShapeError(f"cross_entropy: probability shape {p.shape} vs target shape {t.shape}")
    tv = t.data
    hot = int(np.argmax(tv))
    if not (np.count_nonzero(tv) == 1 and tv[hot] == 1.0):
        raise ValueError("cross_entropy target must be one-hot")
    if abs(float(p.data.sum()) - 1.0) > 1e-3:
        raise ValueError(f"cross_entropy probabilities sum to {p.data.sum():.6f}, not 1")
    ph = float(p.data[hot])
    if ph <= 0.0:
        raise NumericError("cross_entropy: zero probability at the target index")
    P = p.data

    def rule(up):
        g = np.zeros_like(P)
        g[hot] = -up / P[hot]
        return g, None

    return _result(np.asarray(-np.log(ph), dtype=P.dtype), (p, t), "cross_entropy", rule)


def softmax_cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Cross entropy of softmax(logits) against class ``target``, fused.

    Computed as logsumexp(logits) - logits[target]; the gradient w.r.t. the
    logits is softmax(logits) minus the one-hot target.
    """
    if logits.ndim != 1:
        raise ShapeError(f"softmax_cross_entropy expects 1-D logits, got shape {logits.shape}")
    n = logits.data.size
    target = int(target)
    if not 0 <= target < n:
        raise ValueError(f"target index {target} out of range for {n} classes")
    if not np.isfinite(logits.data).all():
        raise NumericError("softmax_cross_entropy: non-finite logits")
    z = logits.data
    m = z.max()
    e = np.exp(z - m)
    lse = m + np.log(e.sum())
    S = e / e.sum()

    def rule(up):
        g = S.copy()
        g[target] -= 1.0
        return (up * g,)

    return _result(np.asarray(lse - z[target], dtype=z.dtype), (logits,),
                   "softmax_cross_entropy", rule)
