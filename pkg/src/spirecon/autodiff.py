"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is define-by-run: every primitive applied while a :class:`Tape`
is active appends a node holding the op kind, the ids of its inputs and a
vector-Jacobian closure.  Nodes are appended in execution order, so the tape
is topologically sorted by construction and a single reverse sweep computes
all gradients.

Example::

    with Tape() as tape:
        x = tape.param(np.array([3.0]))
        loss = sum(square(x))
    tape.backward(loss)
    x.grad  # array([6.])
"""

from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

DTYPE = np.float64

_local = threading.local()


class ShapeError(ValueError):
    """Raised when op inputs do not conform."""


class TapeError(RuntimeError):
    """Raised on invalid use of the tape (non-scalar loss, double backward)."""


class Tensor:
    """An n-d float64 array that may be attached to a tape."""

    __slots__ = ("values", "grad", "node_id", "tape", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, values, tape: "Tape | None" = None, node_id: int | None = None):
        self.values = np.asarray(values, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]
    requires: bool = False


@dataclass
class Tape:
    """Append-only record of the ops executed by one forward pass."""

    nodes: list[_Node] = field(default_factory=list)
    params: set[int] = field(default_factory=set)
    # weak, so leaf -> tape -> leaf is not a reference cycle that pins every
    # iteration's gradients until the cyclic collector runs
    _leaves: weakref.WeakValueDictionary = field(default_factory=weakref.WeakValueDictionary)
    _consumed: bool = False

    def __enter__(self) -> "Tape":
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        stack.pop()

    def _append(self, node: _Node) -> int:
        self.nodes.append(node)
        self._consumed = False
        return len(self.nodes) - 1

    def param(self, values) -> Tensor:
        """Register a trainable leaf.

        Wraps ``values`` without copying, so a parameter view stays tied to
        the owning flat vector.
        """
        t = Tensor(values, self)
        t.node_id = self._append(_Node("param", (), None, t.shape, True))
        self.params.add(t.node_id)
        self._leaves[t.node_id] = t
        return t

    def constant(self, values) -> Tensor:
        t = Tensor(values, self)
        t.node_id = self._append(_Node("const", (), None, t.shape))
        return t

    def record(self, kind: str, inputs: Sequence[Tensor], values: np.ndarray,
               vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
        """Append an op node.  ``vjp`` maps the output cotangent to one
        cotangent (or None) per input."""
        ids = []
        requires = False
        for t in inputs:
            if t.tape is not self:
                t = self.constant(t.values)
            ids.append(t.node_id)
            requires = requires or self.nodes[t.node_id].requires
        out = Tensor(values, self)
        out.node_id = self._append(_Node(kind, tuple(ids), vjp if requires else None,
                                         out.shape, requires))
        return out

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Propagate d(loss)/d(node) back to every trainable leaf.

        Returns ``{node_id: grad}`` for all parameters registered on this
        tape; parameters the loss does not depend on receive zeros.
        """
        if loss.tape is not self:
            raise TapeError("loss was not computed on this tape")
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise TapeError("backward already run on this tape; run a new forward pass first")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones(loss.shape, dtype=DTYPE)
        for i in range(loss.node_id, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            in_grads = node.vjp(g)
            for j, gj in zip(node.inputs, in_grads):
                if gj is None:
                    continue
                if grads[j] is None:
                    grads[j] = gj
                else:
                    grads[j] = grads[j] + gj
            if i not in self.params:
                grads[i] = None
        out = {}
        for pid in sorted(self.params):
            g = grads[pid]
            if g is None:
                g = np.zeros(self.nodes[pid].shape, dtype=DTYPE)
            out[pid] = g
            leaf = self._leaves.get(pid)
            if leaf is not None:
                leaf.grad = g
        # drop closures so saved forward context can be freed
        for node in self.nodes:
            node.vjp = None
        self._consumed = True
        return out


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def needs_grad(t: Tensor) -> bool:
    """Whether a cotangent for ``t`` can reach a trainable parameter."""
    return t.tape is not None and t.node_id is not None and t.tape.nodes[t.node_id].requires


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(kind: str, inputs: Sequence[Tensor], values: np.ndarray, vjp) -> Tensor:
    """Wrap a forward result, recording it if some tape is live."""
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeError(f"{kind}: inputs belong to different tapes")
            tape = t.tape
    if tape is None:
        tape = active_tape()
    if tape is None:
        return Tensor(values)
    return tape.record(kind, inputs, values, vjp)


# ---------------------------------------------------------------- primitives

def _is_scalar(a: np.ndarray) -> bool:
    return a.size == 1


def _binary_shapes(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a.values) or _is_scalar(b.values)):
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)
    sa, sb = a.shape, b.shape
    return apply("add", (a, b), a.values + b.values,
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)
    sa, sb = a.shape, b.shape
    return apply("sub", (a, b), a.values - b.values,
                 lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)
    av, bv = a.values, b.values
    return apply("mul", (a, b), av * bv,
                 lambda g: (_reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)))


def div(a, b) -> Tensor:
    """Elementwise quotient; the divisor must be nonzero everywhere."""
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("div", a, b)
    av, bv = a.values, b.values
    if np.any(bv == 0):
        raise ZeroDivisionError("div: zero in divisor")
    out = av / bv
    return apply("div", (a, b), out,
                 lambda g: (_reduce_to(g / bv, av.shape),
                            _reduce_to(-g * out / bv, bv.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return apply("neg", (a,), -a.values, lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product for 2-d @ 2-d or 2-d @ 1-d operands."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        da = db = None
        if needs_grad(a):
            da = np.outer(g, bv) if bv.ndim == 1 else g @ bv.T
        if needs_grad(b):
            db = av.T @ g
        return da, db

    return apply("matmul", (a, b), av @ bv, vjp)


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    return apply("sum", (a,), np.sum(a.values),
                 lambda g: (np.full(shape, g, dtype=DTYPE),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.size
    return apply("mean", (a,), np.mean(a.values),
                 lambda g: (np.full(shape, g / n, dtype=DTYPE),))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    return apply("square", (a,), av * av, lambda g: (2.0 * av * g,))


def log(a) -> Tensor:
    """Natural log.  Non-positive input raises; clamp before calling."""
    a = as_tensor(a)
    av = a.values
    if np.any(av <= 0):
        raise ValueError("log: non-positive input (clamp first)")
    return apply("log", (a,), np.log(av), lambda g: (g / av,))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values; gradient passes only where the input was inside [lo, hi]."""
    a = as_tensor(a)
    av = a.values
    out = np.clip(av, lo, hi)
    mask = np.ones(av.shape, dtype=bool)
    if lo is not None:
        mask &= av >= lo
    if hi is not None:
        mask &= av <= hi
    return apply("clamp", (a,), out, lambda g: (g * mask,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from exc
    return apply("reshape", (a,), out, lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return apply("concat", ts, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return apply("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    x = a.values
    scale = np.where(x > 0, 1.0, slope)
    return apply("leaky_relu", (a,), x * scale, lambda g: (g * scale,))


def index(a, i) -> Tensor:
    """Select ``a[i]`` for an integer (or tuple) index."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        out[i] = g
        return (out,)

    return apply("index", (a,), np.asarray(a.values[i]), vjp)


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).values)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    size: int
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.m is None:
            self.m = np.zeros(self.size, dtype=DTYPE)
        if self.v is None:
            self.v = np.zeros(self.size, dtype=DTYPE)


def adam_update(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam step, applied to ``params`` in place."""
    if params.shape != grads.shape or params.size != state.m.size:
        raise ShapeError(f"adam_update: params {params.shape}, grads {grads.shape}, "
                         f"state size {state.m.size}")
    bad = _first_nonfinite(grads.ravel())
    if bad >= 0:
        raise FloatingPointError(f"adam_update: non-finite gradient at parameter index {bad}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    _adam_kernel(params.reshape(-1), grads.reshape(-1), state.m, state.v,
                 state.lr, b1, b2, c1, c2, state.eps)
    return params


@njit(cache=True)
def _first_nonfinite(g):
    for i in range(g.size):
        if not np.isfinite(g[i]):
            return i
    return -1


@njit(cache=True)
def _adam_kernel(p, g, m, v, lr, b1, b2, c1, c2, eps):
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
