"""Minimal reverse-mode autodiff over float64 numpy arrays.

A Tape records nodes in construction order (which is already topological),
so backward() is a single reversed sweep. Only the primitives the factor
model and task losses need are provided; everything is deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import TRCores, tr_contract, tr_contract_gradients


class AutodiffError(RuntimeError):
    """Graph construction or backward-pass contract violation."""


class Node:
    __slots__ = ("value", "grad", "parents", "vjps", "requires_grad", "name", "tape")

    def __init__(self, value, tape, parents=(), vjps=(), requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjps = vjps
        self.requires_grad = requires_grad
        self.name = name
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Single-threaded construction record with a leaf (parameter) registry."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, Node] = {}

    def leaf(self, value, name: str) -> Node:
        if name in self.leaves:
            raise AutodiffError(f"duplicate leaf name {name!r}")
        node = Node(value, self, requires_grad=True, name=name)
        self.leaves[name] = node
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        node = Node(value, self)
        self.nodes.append(node)
        return node

    def record(self, value, parents, vjps) -> Node:
        requires = any(p.requires_grad for p in parents)
        node = Node(value, self, parents=tuple(parents), vjps=tuple(vjps),
                    requires_grad=requires)
        self.nodes.append(node)
        return node

    def zero_grad(self):
        for node in self.nodes:
            node.grad = None

    def backward(self, loss: Node):
        """Accumulate dLoss/dLeaf into every registered leaf's .grad."""
        if loss.value.shape != ():
            raise AutodiffError(f"loss must be scalar, got shape {loss.value.shape}")
        if loss.tape is not self:
            raise AutodiffError("loss node belongs to a different tape")
        loss.grad = np.asarray(1.0)
        for node in reversed(self.nodes):
            if node.grad is None or not node.parents:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                if not parent.requires_grad:
                    continue
                contrib = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = np.zeros(parent.value.shape)
                parent.grad += contrib
        for name, node in self.leaves.items():
            if node.grad is None:
                node.grad = np.zeros(node.value.shape)
            if not np.all(np.isfinite(node.grad)):
                raise NumericError(f"non-finite gradient in parameter {name!r}")

    def gradients(self) -> dict[str, np.ndarray]:
        return {name: node.grad for name, node in self.leaves.items()}


def _as_node(x, tape: Tape) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Node, b) -> Node:
    b = _as_node(b, a.tape)
    return a.tape.record(
        a.value + b.value, (a, b),
        (lambda g: _unbroadcast(g, a.value.shape),
         lambda g: _unbroadcast(g, b.value.shape)))


def subtract(a: Node, b) -> Node:
    b = _as_node(b, a.tape)
    return a.tape.record(
        a.value - b.value, (a, b),
        (lambda g: _unbroadcast(g, a.value.shape),
         lambda g: _unbroadcast(-g, b.value.shape)))


def multiply(a: Node, b) -> Node:
    b = _as_node(b, a.tape)
    return a.tape.record(
        a.value * b.value, (a, b),
        (lambda g: _unbroadcast(g * b.value, a.value.shape),
         lambda g: _unbroadcast(g * a.value, b.value.shape)))


def matmul(a: Node, b) -> Node:
    """Matrix product; also covers stacks of matrices (batched matmul)."""
    b = _as_node(b, a.tape)
    return a.tape.record(
        a.value @ b.value, (a, b),
        (lambda g: _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape),
         lambda g: _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape)))


def sin(x: Node) -> Node:
    return x.tape.record(np.sin(x.value), (x,), (lambda g: g * np.cos(x.value),))


def scale(x: Node, c: float) -> Node:
    c = float(c)
    return x.tape.record(c * x.value, (x,), (lambda g: c * g,))


def square(x: Node) -> Node:
    return x.tape.record(x.value ** 2, (x,), (lambda g: 2.0 * x.value * g,))


def absolute(x: Node) -> Node:
    # subgradient at 0 fixed to 0 via np.sign
    return x.tape.record(np.abs(x.value), (x,), (lambda g: g * np.sign(x.value),))


def reshape(x: Node, shape) -> Node:
    old = x.value.shape
    return x.tape.record(x.value.reshape(shape), (x,), (lambda g: g.reshape(old),))


def transpose(x: Node, axes) -> Node:
    inv = np.argsort(axes)
    return x.tape.record(np.transpose(x.value, axes), (x,),
                         (lambda g: np.transpose(g, inv),))


def concatenate(nodes, axis=0) -> Node:
    tape = nodes[0].tape
    nodes = [_as_node(n, tape) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * nodes[i].value.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        return lambda g: g[tuple(sl)]

    value = np.concatenate([n.value for n in nodes], axis=axis)
    return tape.record(value, tuple(nodes), tuple(make_vjp(i) for i in range(len(nodes))))


def getitem(x: Node, key) -> Node:
    def vjp(g):
        out = np.zeros(x.value.shape)
        np.add.at(out, key, g)
        return out

    return x.tape.record(x.value[key], (x,), (vjp,))


def masked_select(x: Node, mask) -> Node:
    """Flat vector of the entries where mask is nonzero."""
    mask = np.asarray(mask) != 0
    if mask.shape != x.value.shape:
        raise ShapeError(f"mask shape {mask.shape} != value shape {x.value.shape}")

    def vjp(g):
        out = np.zeros(x.value.shape)
        out[mask] = g
        return out

    return x.tape.record(x.value[mask], (x,), (vjp,))


def tensor_sum(x: Node, axis=None) -> Node:
    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, x.value.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), x.value.shape).copy()

    return x.tape.record(np.sum(x.value, axis=axis), (x,), (vjp,))


def tensor_mean(x: Node, axis=None) -> Node:
    count = x.value.size if axis is None else x.value.shape[axis]

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / count, x.value.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis) / count, x.value.shape).copy()

    return x.tape.record(np.mean(x.value, axis=axis), (x,), (vjp,))


def diff(x: Node, axis: int) -> Node:
    """Forward difference along an axis, no wraparound (length n-1 output)."""
    if x.value.shape[axis] < 2:
        raise ShapeError(f"axis {axis} too short for finite differences")

    def vjp(g):
        out = np.zeros(x.value.shape)
        hi = [slice(None)] * x.value.ndim
        lo = [slice(None)] * x.value.ndim
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        out[tuple(hi)] += g
        out[tuple(lo)] -= g
        return out

    return x.tape.record(np.diff(x.value, axis=axis), (x,), (vjp,))


def avg_pool(x: Node, s: int) -> Node:
    """Non-overlapping s×s block mean over the first two axes."""
    n1, n2 = x.value.shape[:2]
    if n1 % s or n2 % s:
        raise ShapeError(f"spatial dims ({n1}, {n2}) not divisible by factor {s}")
    rest = x.value.shape[2:]
    pooled = x.value.reshape(n1 // s, s, n2 // s, s, *rest).mean(axis=(1, 3))

    def vjp(g):
        g = np.expand_dims(np.expand_dims(g, 1), 3) / (s * s)
        return np.broadcast_to(g, (n1 // s, s, n2 // s, s, *rest)).reshape(x.value.shape)

    return x.tape.record(pooled, (x,), (vjp,))


def mode3(c: Node, basis) -> Node:
    """Mode-3 product of a third-order tensor with a matrix: (r,n,R)·(j,R) -> (r,n,j).

    The basis may be a plain array (fixed, non-trainable) or a Node.
    """
    b = _as_node(basis, c.tape)
    if c.value.ndim != 3 or b.value.ndim != 2 or b.value.shape[1] != c.value.shape[2]:
        raise ShapeError(
            f"mode-3 product shapes incompatible: {c.value.shape} vs {b.value.shape}")
    value = np.einsum("pns,js->pnj", c.value, b.value)
    return c.tape.record(
        value, (c, b),
        (lambda g: np.einsum("pnj,js->pns", g, b.value),
         lambda g: np.einsum("pnj,pns->js", g, c.value)))


def ring_contract(cores) -> Node:
    """TR contraction of parameterized cores into the full tensor."""
    tape = cores[0].tape
    cores = [_as_node(c, tape) for c in cores]
    tr = TRCores(tuple(c.value for c in cores))

    def make_vjp(k):
        return lambda g: tr_contract_gradients(tr, g)[k]

    return tape.record(tr_contract(tr), tuple(cores),
                       tuple(make_vjp(k) for k in range(len(cores))))


def trace_chain(mats) -> Node:
    """Trace of a left-to-right product of matrix stacks (n, r_k, r_{k+1}).

    The chain must close the ring (last column count == first row count);
    output has shape (n,).
    """
    tape = mats[0].tape
    mats = [_as_node(m, tape) for m in mats]
    vals = [m.value for m in mats]
    d = len(vals)
    lefts = [None] * d  # product of vals[0..k-1]
    acc = None
    for k in range(d):
        lefts[k] = acc
        acc = vals[k] if acc is None else acc @ vals[k]
    rights = [None] * d  # product of vals[k+1..d-1]
    acc = None
    for k in range(d - 1, -1, -1):
        rights[k] = acc
        acc = vals[k] if acc is None else vals[k] @ acc
    value = np.trace(lefts[-1] @ vals[-1] if d > 1 else vals[0],
                     axis1=-2, axis2=-1)

    def make_vjp(k):
        def vjp(g):
            left = lefts[k]
            right = rights[k]
            if left is None and right is None:
                n, r, _ = vals[k].shape
                around = np.broadcast_to(np.eye(r), (n, r, r))
            elif left is None:
                around = right
            elif right is None:
                around = left
            else:
                around = right @ left
            return g[:, None, None] * np.swapaxes(around, -1, -2)
        return vjp

    return tape.record(value, tuple(mats), tuple(make_vjp(k) for k in range(d)))


_PRIMITIVES = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "matmul": matmul,
    "mode3": mode3,
    "sin": sin,
    "scale": scale,
    "reshape": reshape,
    "transpose": transpose,
    "concatenate": concatenate,
    "getitem": getitem,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "absolute": absolute,
    "square": square,
    "masked_select": masked_select,
    "diff": diff,
    "avg_pool": avg_pool,
    "ring_contract": ring_contract,
    "trace_chain": trace_chain,
}


def supported_primitives() -> frozenset[str]:
    return frozenset(_PRIMITIVES)


def apply_primitive(name: str, *args, **kwargs) -> Node:
    if name not in _PRIMITIVES:
        raise AutodiffError(f"unsupported primitive {name!r}")
    return _PRIMITIVES[name](*args, **kwargs)
