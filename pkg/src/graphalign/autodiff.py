"""Minimal reverse-mode autodiff over dense float64 matrices.

Every value is a 2-D matrix (scalars are 1x1). Graphs are built eagerly by
the primitive functions below and differentiated by a reverse topological
sweep; gradients accumulate additively across fan-out. The primitive set is
exactly what the alignment models need, including normalizations that are
differentiated through the division, so a fixed-iteration Sinkhorn can be
unrolled and trained end to end.
"""
from __future__ import annotations

import itertools

import numpy as np


class ShapeError(ValueError):
    pass


_serial_counter = itertools.count()


class Value:
    """A node in the computation graph: matrix payload plus gradient slot.

    Gradients are allocated lazily (on first backward touch); the serial
    number records creation order, which is always a valid topological order.
    """

    __slots__ = ("data", "_grad", "kind", "parents", "_backward", "serial")

    def __init__(self, data, kind: str = "leaf", parents: tuple = (), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim == 0:
            self.data = self.data.reshape(1, 1)
        elif self.data.ndim == 1:
            self.data = self.data.reshape(1, -1)
        if self.data.ndim != 2:
            raise ShapeError(f"{kind}: values must be matrices, got ndim={self.data.ndim}")
        self._grad = None
        self.kind = kind
        self.parents = parents
        self._backward = backward
        self.serial = next(_serial_counter)

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() on non-scalar shape {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Value(kind={self.kind!r}, shape={self.shape})"

    # operator sugar for the common primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def constant(data) -> Value:
    return Value(data, kind="const")


def _require_same_shape(kind: str, a: Value, b: Value):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Value, b: Value) -> Value:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} x {b.shape}")
    out = Value(a.data @ b.data, "matmul", (a, b))

    def backward(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._backward = backward
    return out


def transpose(a: Value) -> Value:
    out = Value(a.data.T.copy(), "transpose", (a,))

    def backward(g):
        a.grad += g.T

    out._backward = backward
    return out


def add(a: Value, b: Value) -> Value:
    _require_same_shape("add", a, b)
    out = Value(a.data + b.data, "add", (a, b))

    def backward(g):
        a.grad += g
        b.grad += g

    out._backward = backward
    return out


def sub(a: Value, b: Value) -> Value:
    _require_same_shape("sub", a, b)
    out = Value(a.data - b.data, "sub", (a, b))

    def backward(g):
        a.grad += g
        b.grad -= g

    out._backward = backward
    return out


def mul(a: Value, b: Value) -> Value:
    _require_same_shape("mul", a, b)
    out = Value(a.data * b.data, "mul", (a, b))

    def backward(g):
        a.grad += g * b.data
        b.grad += g * a.data

    out._backward = backward
    return out


def scalar_mul(a: Value, c: float) -> Value:
    c = float(c)
    out = Value(a.data * c, "scalar_mul", (a,))

    def backward(g):
        a.grad += g * c

    out._backward = backward
    return out


def divide(a: Value, b: Value) -> Value:
    _require_same_shape("divide", a, b)
    out = Value(a.data / b.data, "divide", (a, b))

    def backward(g):
        a.grad += g / b.data
        b.grad -= g * a.data / (b.data * b.data)

    out._backward = backward
    return out


def relu(a: Value) -> Value:
    # subgradient at 0 is 0
    mask = (a.data > 0).astype(np.float64)
    out = Value(a.data * mask, "relu", (a,))

    def backward(g):
        a.grad += g * mask

    out._backward = backward
    return out


def exp(a: Value) -> Value:
    out = Value(np.exp(a.data), "exp", (a,))

    def backward(g):
        a.grad += g * out.data

    out._backward = backward
    return out


def log(a: Value) -> Value:
    out = Value(np.log(a.data), "log", (a,))

    def backward(g):
        a.grad += g / a.data

    out._backward = backward
    return out


def sigmoid(a: Value) -> Value:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Value(s, "sigmoid", (a,))

    def backward(g):
        a.grad += g * s * (1.0 - s)

    out._backward = backward
    return out


def tanh(a: Value) -> Value:
    t = np.tanh(a.data)
    out = Value(t, "tanh", (a,))

    def backward(g):
        a.grad += g * (1.0 - t * t)

    out._backward = backward
    return out


def sum_all(a: Value) -> Value:
    out = Value(np.array([[a.data.sum()]]), "sum_all", (a,))

    def backward(g):
        a.grad += g[0, 0]

    out._backward = backward
    return out


def sum_rows(a: Value) -> Value:
    """Sum across each row -> (n, 1)."""
    out = Value(a.data.sum(axis=1, keepdims=True), "sum_rows", (a,))

    def backward(g):
        a.grad += g  # broadcasts (n,1) over columns

    out._backward = backward
    return out


def sum_cols(a: Value) -> Value:
    """Sum down each column -> (1, m)."""
    out = Value(a.data.sum(axis=0, keepdims=True), "sum_cols", (a,))

    def backward(g):
        a.grad += g

    out._backward = backward
    return out


def row_normalize(a: Value) -> Value:
    s = a.data.sum(axis=1, keepdims=True)
    y = a.data / s
    out = Value(y, "row_normalize", (a,))

    def backward(g):
        # quotient rule: d(x/s)/dx with s depending on the whole row
        dot = (g * y).sum(axis=1, keepdims=True)
        a.grad += (g - dot) / s

    out._backward = backward
    return out


def col_normalize(a: Value) -> Value:
    s = a.data.sum(axis=0, keepdims=True)
    y = a.data / s
    out = Value(y, "col_normalize", (a,))

    def backward(g):
        dot = (g * y).sum(axis=0, keepdims=True)
        a.grad += (g - dot) / s

    out._backward = backward
    return out


def add_bias(x: Value, bias: Value) -> Value:
    """Add a 1-row bias to every row of x (the one broadcast the layers need)."""
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit {x.shape}")
    out = Value(x.data + bias.data, "add_bias", (x, bias))

    def backward(g):
        x.grad += g
        bias.grad += g.sum(axis=0, keepdims=True)

    out._backward = backward
    return out


def concat_cols(*parts: Value) -> Value:
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    out = Value(np.concatenate([p.data for p in parts], axis=1), "concat_cols", parts)

    def backward(g):
        at = 0
        for p, w in zip(parts, widths):
            p.grad += g[:, at:at + w]
            at += w

    out._backward = backward
    return out


def gather_rows(a: Value, index) -> Value:
    """Select rows by index (the slice-rows primitive); backward scatter-adds."""
    index = np.asarray(index, dtype=np.intp)
    out = Value(a.data[index], "gather_rows", (a,))

    def backward(g):
        np.add.at(a.grad, index, g)

    out._backward = backward
    return out


def relu_sum(a: Value) -> Value:
    """sum(max(a, 0)) as one scalar node; the workhorse of the hinge distances."""
    mask = (a.data > 0).astype(np.float64)
    out = Value(np.array([[(a.data * mask).sum()]]), "relu_sum", (a,))

    def backward(g):
        a.grad += g[0, 0] * mask

    out._backward = backward
    return out


_PRIMITIVES = {
    "matmul": matmul,
    "transpose": transpose,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "scalar-mul": scalar_mul,
    "relu": relu,
    "exp": exp,
    "log": log,
    "divide": divide,
    "sum-all": sum_all,
    "sum-rows": sum_rows,
    "sum-cols": sum_cols,
    "row-normalize": row_normalize,
    "col-normalize": col_normalize,
    "concat-cols": concat_cols,
    "slice-rows": gather_rows,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "max-with-zero-sum": relu_sum,
}


def apply_primitive(kind: str, inputs, attrs: dict | None = None) -> Value:
    """Dispatch a primitive by name; attrs carry non-Value arguments."""
    if kind not in _PRIMITIVES:
        raise ShapeError(f"unknown primitive kind {kind!r}")
    attrs = attrs or {}
    return _PRIMITIVES[kind](*inputs, **attrs)


def topo_order(root: Value) -> list[Value]:
    """Parents-before-children order: reachable set sorted by creation serial."""
    seen: dict[int, Value] = {id(root): root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if id(p) not in seen:
                seen[id(p)] = p
                stack.append(p)
    return sorted(seen.values(), key=lambda v: v.serial)


def backward(loss: Value, seed: float = 1.0) -> None:
    """Accumulate d(loss)/d(node) into .grad over the whole graph below `loss`."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    loss.grad = loss.grad + np.array([[float(seed)]])
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(root: Value) -> None:
    for node in topo_order(root):
        node._grad = None


def min_kink_distance(root: Value) -> float:
    """Smallest |input| feeding any ReLU in the graph below `root`.

    Central differences are only trustworthy when no ReLU input sits within
    the probe step of zero; callers use this to reject such probe points.
    """
    worst = np.inf
    for node in topo_order(root):
        if node.kind in ("relu", "relu_sum") and node.parents[0].data.size:
            worst = min(worst, float(np.abs(node.parents[0].data).min()))
    return worst


def grad_check(build, inputs: list[np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    `build` maps a list of leaf Values to a scalar Value. Relative error per
    coordinate is |analytic - numeric| / (|numeric| + 1e-8).
    """
    leaves = [Value(x.copy(), kind="leaf") for x in inputs]
    loss = build(leaves)
    backward(loss)
    worst = 0.0
    for li, leaf in enumerate(leaves):
        for idx in np.ndindex(*leaf.shape):
            orig = leaf.data[idx]
            plus = [v.data.copy() for v in leaves]
            minus = [v.data.copy() for v in leaves]
            plus[li][idx] = orig + eps
            minus[li][idx] = orig - eps
            f_plus = build([Value(x) for x in plus]).item()
            f_minus = build([Value(x) for x in minus]).item()
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(leaf.grad[idx] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
