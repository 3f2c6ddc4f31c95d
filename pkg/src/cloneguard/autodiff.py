"""Reverse-mode automatic differentiation over dense float64 arrays.

The backward pass is itself expressed in terms of the same primitive ops,
so gradients can be differentiated again (double backward). This is what
makes losses containing gradient norms or gradient cosines trainable.

All arithmetic is float64. Every primitive checks its output for NaN/Inf
and raises instead of propagating silently.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class AutodiffError(ValueError):
    """Raised on invalid differentiation requests or non-finite values."""


_state = threading.local()


def _recording_enabled() -> bool:
    return getattr(_state, "enabled", True)


class no_record:
    """Context manager that disables graph construction on this thread."""

    def __enter__(self):
        self._prev = _recording_enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class ComputationRecord:
    """Append-only tape of primitive ops.

    ``generation`` starts at 0; a backward pass requested with
    ``create_higher_order`` bumps it, so nodes appended while differentiating
    a generation-k graph carry generation k+1.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.generation = 0

    def append(self, node: "Node") -> None:
        self.nodes.append(node)

    def replay(self) -> bool:
        """Re-execute every node's forward fn; True iff all outputs match bitwise."""
        for node in self.nodes:
            if not np.array_equal(node.recompute(), node.output.data):
                return False
        return True


class Node:
    __slots__ = ("op", "inputs", "output", "generation", "_forward")

    def __init__(self, op: str, inputs: tuple, output: "Tensor",
                 generation: int, forward: Callable[[], np.ndarray]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.generation = generation
        self._forward = forward

    def recompute(self) -> np.ndarray:
        return self._forward()


class Tensor:
    """A dense float64 array, optionally attached to a computation record."""

    __slots__ = ("data", "requires_grad", "record", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise AutodiffError("tensor initialized with non-finite values")
        self.requires_grad = bool(requires_grad)
        self.record: Optional[ComputationRecord] = None
        self._parents: tuple = ()
        self._vjp = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __pow__(self, exponent):
        return pow_const(self, float(exponent))

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def tanh(self):
        return tanh(self)

    def sqrt(self):
        return pow_const(self, 0.5)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, parents: tuple, vjp, forward) -> Tensor:
    """Construct an op result, appending to the parents' record when tracing."""
    if not np.all(np.isfinite(data)):
        raise AutodiffError(f"non-finite values produced by op {op!r}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.record = None
    out._parents = ()
    out._vjp = None
    out.op = op
    out.requires_grad = False
    if _recording_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        record = None
        for p in parents:
            if p.record is not None:
                record = p.record
                break
        if record is None:
            record = ComputationRecord()
        out.record = record
        record.append(Node(op, parents, out, record.generation, forward))
    return out


# -- primitives -------------------------------------------------------------


def add(x: Tensor, y: Tensor) -> Tensor:
    return _make("add", x.data + y.data, (x, y),
                 lambda g: (g, g),
                 lambda: x.data + y.data)


def sub(x: Tensor, y: Tensor) -> Tensor:
    return _make("sub", x.data - y.data, (x, y),
                 lambda g: (g, neg(g)),
                 lambda: x.data - y.data)


def neg(x: Tensor) -> Tensor:
    return _make("neg", -x.data, (x,),
                 lambda g: (neg(g),),
                 lambda: -x.data)


def mul(x: Tensor, y: Tensor) -> Tensor:
    return _make("mul", x.data * y.data, (x, y),
                 lambda g: (mul(g, y), mul(g, x)),
                 lambda: x.data * y.data)


def div(x: Tensor, y: Tensor) -> Tensor:
    return _make("div", x.data / y.data, (x, y),
                 lambda g: (div(g, y), neg(div(mul(g, x), mul(y, y)))),
                 lambda: x.data / y.data)


def pow_const(x: Tensor, c: float) -> Tensor:
    return _make(f"pow[{c}]", x.data ** c, (x,),
                 lambda g: (mul(g, mul(Tensor(c), pow_const(x, c - 1.0))),),
                 lambda: x.data ** c)


def matmul(x: Tensor, y: Tensor) -> Tensor:
    return _make("matmul", x.data @ y.data, (x, y),
                 lambda g: (matmul(g, transpose(y)), matmul(transpose(x), g)),
                 lambda: x.data @ y.data)


def transpose(x: Tensor) -> Tensor:
    return _make("transpose", x.data.T, (x,),
                 lambda g: (transpose(g),),
                 lambda: x.data.T)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = x.data.shape
    return _make("reshape", x.data.reshape(shape), (x,),
                 lambda g: (reshape(g, orig),),
                 lambda: x.data.reshape(shape))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    # numpy's pairwise summation is deterministic run to run, which is what
    # the reproducibility contract needs.
    data = np.sum(x.data, axis=axis, keepdims=keepdims)
    data = np.asarray(data)
    orig = x.data.shape

    def vjp(g):
        if axis is not None and not keepdims:
            kept = list(orig)
            axes = (axis,) if isinstance(axis, int) else axis
            for a in axes:
                kept[a] = 1
            g = reshape(g, kept)
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * len(orig))
        return (broadcast_to(g, orig),)

    return _make("sum", data, (x,), vjp,
                 lambda: np.asarray(np.sum(x.data, axis=axis, keepdims=keepdims)))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make("broadcast", np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (sum_to(g, x.data.shape),),
                 lambda: np.broadcast_to(x.data, shape).copy())


def sum_to(x: Tensor, shape) -> Tensor:
    """Reduce ``x`` to ``shape`` by summing over broadcast axes."""
    shape = tuple(shape)
    if x.data.shape == shape:
        return x
    g = x
    while len(g.data.shape) > len(shape):
        g = tsum(g, axis=0)
    for i, extent in enumerate(shape):
        if extent == 1 and g.data.shape[i] != 1:
            g = tsum(g, axis=i, keepdims=True)
    if g.data.shape != shape:
        g = reshape(g, shape)
    return g


def log(x: Tensor) -> Tensor:
    return _make("log", np.log(x.data), (x,),
                 lambda g: (div(g, x),),
                 lambda: np.log(x.data))


def exp(x: Tensor) -> Tensor:
    out = _make("exp", np.exp(x.data), (x,),
                lambda g: (mul(g, out),),
                lambda: np.exp(x.data))
    return out


def tanh(x: Tensor) -> Tensor:
    out = _make("tanh", np.tanh(x.data), (x,),
                lambda g: (mul(g, sub(Tensor(1.0), mul(out, out))),),
                lambda: np.tanh(x.data))
    return out


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(np.float64)
    return _make("relu", x.data * mask, (x,),
                 lambda g: (mul(g, Tensor(mask)),),
                 lambda: x.data * mask)


def clip_min(x: Tensor, floor: float) -> Tensor:
    # Subgradient: pass-through where x >= floor, zero below.
    mask = (x.data >= floor).astype(np.float64)
    return _make(f"clip_min[{floor}]", np.maximum(x.data, floor), (x,),
                 lambda g: (mul(g, Tensor(mask)),),
                 lambda: np.maximum(x.data, floor))


# -- differentiation --------------------------------------------------------


def grad_tensors(output: Tensor, wrt: Sequence[Tensor],
                 create_higher_order: bool = False) -> list[Tensor]:
    """Gradient of a scalar ``output`` w.r.t. each tensor in ``wrt``.

    With ``create_higher_order`` the returned tensors carry their own graph
    (norms and similarities of them stay differentiable); otherwise they are
    detached values.
    """
    if output.data.size != 1:
        raise AutodiffError(
            f"grad requires a scalar output, got shape {output.data.shape}")
    if not output.requires_grad or output._vjp is None:
        raise AutodiffError("output is detached: no computation record to traverse")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(output, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    if create_higher_order and output.record is not None:
        output.record.generation += 1

    def backward():
        adjoints: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
        for t in reversed(topo):
            g = adjoints.get(id(t))
            if g is None or t._vjp is None:
                continue
            for p, pg in zip(t._parents, t._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                pg = sum_to(pg, p.data.shape)
                acc = adjoints.get(id(p))
                adjoints[id(p)] = pg if acc is None else add(acc, pg)
        return adjoints

    if create_higher_order:
        adjoints = backward()
        return [adjoints.get(id(w), Tensor(np.zeros_like(w.data))) for w in wrt]
    with no_record():
        adjoints = backward()
    return [Tensor(adjoints[id(w)].data.copy()) if id(w) in adjoints
            else Tensor(np.zeros_like(w.data)) for w in wrt]
