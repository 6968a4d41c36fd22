"""Reverse-mode autodiff over dense numpy arrays.

Operations record themselves on the innermost active :class:`Graph`; outside a
graph they run eagerly with nothing retained. Broadcasting is limited to
identical shapes, scalars, and trailing-suffix operands (bias-style); anything
else goes through :func:`expand`.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from lte import kernels


class ShapeError(ValueError):
    pass


class GraphStateError(RuntimeError):
    pass


_state = threading.local()


def _stack():
    if not hasattr(_state, "graphs"):
        _state.graphs = []
        _state.dtype = np.float32
    return _state.graphs


def default_dtype():
    _stack()
    return _state.dtype


@contextlib.contextmanager
def precision(bits):
    """Switch the default float width (32 for training, 64 for gradient checks)."""
    _stack()
    old = _state.dtype
    _state.dtype = {32: np.float32, 64: np.float64}[bits]
    try:
        yield
    finally:
        _state.dtype = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = np.asarray(data, dtype=dtype or default_dtype(), order="C")
        self.grad = None
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    __slots__ = ("op", "inputs", "output", "backward", "visits")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.visits = 0


class Graph:
    """Tape of operation records; creation order is a topological order."""

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self.visit_counts = {}

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def record(self, op, inputs, output, backward):
        node = Node(op, inputs, output, backward)
        output.node = node
        self.nodes.append(node)

    def backward(self, output, grad=None):
        """Propagate ``grad`` from ``output`` to every leaf with requires_grad.

        Leaf gradients accumulate into ``.grad``; the same mapping is returned.
        """
        if self.consumed:
            raise GraphStateError("graph already consumed by a previous backward")
        if not self.nodes or output.node is None or output.node not in self._index():
            raise GraphStateError("backward called before forward recorded the output")
        if grad is None:
            if output.data.size != 1:
                raise ShapeError(f"backward: implicit seed needs a scalar output, got {output.shape}")
            grad = np.ones_like(output.data)
        grad = np.asarray(grad, dtype=output.data.dtype)
        if grad.shape != output.shape:
            raise ShapeError(f"backward: output_grad shape {grad.shape} != output shape {output.shape}")

        grads = {id(output): grad}
        leaves = {}
        stop = self._index()[output.node]
        for node in reversed(self.nodes[: stop + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            node.visits += 1
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"{node.op} backward produced {gi.shape} for input {t.shape}")
                key = id(t)
                if t.node is None:
                    leaves[key] = (t, leaves[key][1] + gi) if key in leaves else (t, gi)
                elif key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = {}
        for t, g in leaves.values():
            t.grad = g.copy() if t.grad is None else t.grad + g
            out[t] = g
        self.consumed = True
        self.visit_counts = {n.op + f"#{i}": n.visits for i, n in enumerate(self.nodes)}
        self.release()
        return out

    def release(self):
        """Drop saved activations; tensors and nodes otherwise form reference cycles."""
        for node in self.nodes:
            node.output.node = None
            node.inputs = ()
            node.backward = None
        self.nodes = []

    def _index(self):
        return {n: i for i, n in enumerate(self.nodes)}


def backward(graph, output, output_grad=None):
    return graph.backward(output, output_grad)


def current_graph():
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def _result(op, data, inputs, backward):
    out = Tensor(data, dtype=data.dtype)
    graph = current_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.record(op, inputs, out, backward)
    return out


# ----------------------------------------------------------------- binary ops

def _broadcast_kind(op, a, b):
    if a.shape == b.shape:
        return None
    if b.ndim == 0 or (b.ndim < a.ndim and a.shape[a.ndim - b.ndim:] == b.shape):
        return "b"
    if a.ndim == 0 or (a.ndim < b.ndim and b.shape[b.ndim - a.ndim:] == a.shape):
        return "a"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + tuple(shape)).sum(axis=0) if lead else g.sum().reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_kind("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_kind("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_kind("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), bw)


def matmul(a, b):
    """(..., n, k) @ (k, m), or batched (B..., n, k) @ (B..., k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    batched = b.ndim > 2
    if batched and (a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]):
        raise ShapeError(f"matmul: batch dims differ {a.shape} and {b.shape}")

    def bw(g):
        if batched:
            return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g
        a2 = a.data.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        return g @ b.data.T, a2.T @ g2

    return _result("matmul", a.data @ b.data, (a, b), bw)


# ------------------------------------------------------------------ unary ops

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _result("relu", np.where(mask, x.data, 0).astype(x.data.dtype), (x,), bw)


def softplus(x):
    x = as_tensor(x)
    y = np.logaddexp(0, x.data).astype(x.data.dtype)

    def bw(g):
        sig = np.exp(-np.logaddexp(0, -x.data)).astype(x.data.dtype)
        return (g * sig,)

    return _result("softplus", y, (x,), bw)


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)

    def bw(g):
        return (g * y,)

    return _result("exp", y, (x,), bw)


def log(x):
    x = as_tensor(x)

    def bw(g):
        return (g / x.data,)

    return _result("log", np.log(x.data), (x,), bw)


# ------------------------------------------------------------ shape plumbing

def reshape(x, shape):
    x = as_tensor(x)
    y = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _result("reshape", y, (x,), bw)


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _result("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,), bw)


def expand(x, axis, n):
    """Insert a new axis of extent ``n`` by repetition."""
    x = as_tensor(x)
    y = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)

    def bw(g):
        return (g.sum(axis=axis),)

    return _result("expand", y, (x,), bw)


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {xs[0].shape} and {x.shape} on axis {axis}")
    splits = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result("concat", np.concatenate([x.data for x in xs], axis=ax), tuple(xs), bw)


def gather(x, index):
    """Rows of ``x`` selected by an integer array of any shape."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather: index out of range for leading extent {x.shape[0]}")
    rest = x.shape[1:]

    def bw(g):
        flat = g.reshape((index.size,) + rest)
        return (kernels.scatter_add_rows(flat, index.ravel(), x.shape[0]),)

    return _result("gather", x.data[index], (x,), bw)


def scatter_add(src, index, n):
    """Sum rows of ``src`` (shape index.shape + rest) into ``n`` output rows."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64)
    if src.shape[: index.ndim] != index.shape:
        raise ShapeError(f"scatter_add: src {src.shape} does not start with index shape {index.shape}")
    rest = src.shape[index.ndim:]
    flat = src.data.reshape((index.size,) + rest)

    def bw(g):
        return (g[index],)

    return _result("scatter_add", kernels.scatter_add_rows(flat, index.ravel(), n), (src,), bw)


# ---------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    y = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.data.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("sum", y, (x,), bw)


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def max_reduce(x, axis):
    """Max along ``axis``; returns (values, argmax). Ties go to the lowest index."""
    x = as_tensor(x)
    idx = np.argmax(x.data, axis=axis)
    vals = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        out = np.zeros_like(x.data)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _result("max_reduce", vals, (x,), bw), idx


def softmax(x, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get zero weight."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = (e / e.sum(axis=axis, keepdims=True)).astype(x.data.dtype)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result("softmax", y, (x,), bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(x.data.dtype)

    def bw(g):
        d = x.shape[-1]
        gx = g * gamma.data
        dx = inv / d * (d * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
        return (
            dx.astype(x.data.dtype),
            (g * xhat).reshape(-1, d).sum(0),
            g.reshape(-1, d).sum(0),
        )

    return _result("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), bw)


OPS = {
    "add": add, "sub": sub, "mul": mul, "matmul": matmul, "relu": relu,
    "softplus": softplus, "exp": exp, "log": log, "reshape": reshape,
    "transpose": transpose, "expand": expand, "concat": concat, "gather": gather,
    "scatter_add": scatter_add, "sum": sum, "max_reduce": max_reduce,
    "softmax": softmax, "layer_norm": layer_norm,
}
