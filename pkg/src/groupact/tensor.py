"""Reverse-mode autodiff on a dynamic tape.

A Graph is an append-only record of executed ops. While a Graph in "train"
mode is active (as a context manager), every op appends a node holding the
op name, the input tensors, the output tensor, and a closure that maps the
output gradient to per-input gradients. backward() walks the tape from the
loss node toward node 0, accumulating gradients; tensors created outside any
op (leaves) receive them in .grad.

All values are float64. Any op that produces a NaN or infinity raises
NumericsError at the op that produced it; the single check lives in the
Tensor constructor, which every op goes through.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EmptySetError,
    NumericsError,
    ShapeError,
    UsageError,
)

MODE_TRAIN = "train"
MODE_INFER = "infer"

LAYER_NORM_EPS = 1e-5

_GRAPH_STACK: list["Graph"] = []


def check_mode(mode):
    if mode not in (MODE_TRAIN, MODE_INFER):
        raise UsageError(f"mode must be '{MODE_TRAIN}' or '{MODE_INFER}', got {mode!r}")


class _Node:
    __slots__ = ("op", "inputs", "out", "vjp")

    def __init__(self, op, inputs, out, vjp):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.vjp = vjp


class Graph:
    """Tape of executed ops. mode 'train' records; 'infer' computes only."""

    def __init__(self, mode=MODE_TRAIN):
        check_mode(mode)
        self.mode = mode
        self.nodes: list[_Node] = []

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _GRAPH_STACK.pop()
        assert popped is self
        return False

    def _record(self, op, inputs, out, vjp):
        self.nodes.append(_Node(op, inputs, out, vjp))
        return len(self.nodes) - 1


def _recording_graph():
    if _GRAPH_STACK and _GRAPH_STACK[-1].mode == MODE_TRAIN:
        return _GRAPH_STACK[-1]
    return None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_graph", "_node_id")

    def __init__(self, data, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericsError("non-finite value encountered")
        self.data = arr
        # Eager zero grad means a parameter that never touches the loss still
        # reads back an all-zero gradient after backward().
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.requires_grad = requires_grad
        self._graph = None
        self._node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Accumulate d(self)/d(leaf) into each leaf's .grad. self must be scalar."""
        if self.data.size != 1:
            raise UsageError(f"backward() requires a scalar, got shape {self.data.shape}")
        if self._graph is None:
            raise UsageError("backward() on a tensor with no recorded history")
        graph = self._graph
        # Gradient flowing into each tape node, keyed by node id. The tape is
        # in execution order, so one reverse scan visits every node after all
        # of its consumers.
        flows = {self._node_id: np.ones_like(self.data)}
        for nid in range(self._node_id, -1, -1):
            grad_out = flows.pop(nid, None)
            if grad_out is None:
                continue
            node = graph.nodes[nid]
            grads_in = node.vjp(grad_out)
            for inp, g in zip(node.inputs, grads_in):
                if g is None:
                    continue
                if inp._graph is graph and inp._node_id is not None:
                    prev = flows.get(inp._node_id)
                    flows[inp._node_id] = g if prev is None else prev + g
                elif inp.requires_grad:
                    inp.grad += g

    # Operator sugar. Scalars are plain python floats; tensor-tensor ops
    # go through the module functions so they are recorded uniformly.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _result(op, data, inputs, make_vjp):
    """Wrap op output; record a node iff a train-mode graph is active."""
    out = Tensor(data)
    graph = _recording_graph()
    if graph is not None:
        out._graph = graph
        out._node_id = graph._record(op, inputs, out, make_vjp())
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts (m, n) + (n,) for a row-broadcast bias."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        bias_rows = False
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        bias_rows = True
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def make_vjp():
        if bias_rows:
            return lambda g: (g, g.sum(axis=0))
        return lambda g: (g, g)

    return _result("add", a.data + b.data, (a, b), make_vjp)


def mul(a: Tensor, b) -> Tensor:
    """a * b where b is a same-shape tensor or a python scalar."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)

        def make_vjp():
            return lambda g: (g * c,)

        return _result("scale", a.data * c, (a,), make_vjp)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def make_vjp():
        return lambda g: (g * bd, g * ad)

    return _result("mul", ad * bd, (a, b), make_vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: need 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def make_vjp():
        return lambda g: (g @ bd.T, ad.T @ g)

    return _result("matmul", ad @ bd, (a, b), make_vjp)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: need a 2-d tensor, got {a.shape}")

    def make_vjp():
        return lambda g: (np.ascontiguousarray(g.T),)

    return _result("transpose", a.data.T, (a,), make_vjp)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old_shape = a.shape

    def make_vjp():
        return lambda g: (g.reshape(old_shape),)

    return _result("reshape", a.data.reshape(shape), (a,), make_vjp)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def make_vjp():
        return lambda g: (g * mask,)

    return _result("relu", np.maximum(a.data, 0.0), (a,), make_vjp)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    a = _as_tensor(a)
    shape = a.shape

    def make_vjp():
        return lambda g: (np.broadcast_to(g, shape).copy(),)

    return _result("sum_all", a.data.sum(), (a,), make_vjp)


def concat_last_dim(parts) -> Tensor:
    """Concatenate 2-d tensors along columns. Backward splits the gradient."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise UsageError("concat_last_dim: no tensors given")
    rows = parts[0].shape[0] if parts[0].ndim == 2 else None
    for p in parts:
        if p.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(
                "concat_last_dim: all parts must be 2-d with equal row counts, got "
                + ", ".join(str(q.shape) for q in parts)
            )
    widths = [p.shape[1] for p in parts]

    def make_vjp():
        def vjp(g):
            out, col = [], 0
            for w in widths:
                out.append(g[:, col : col + w])
                col += w
            return tuple(out)

        return vjp

    return _result("concat_last_dim", np.concatenate([p.data for p in parts], axis=1), tuple(parts), make_vjp)


def max_over_set(a: Tensor) -> Tensor:
    """Columnwise max over the rows of an (n, d) tensor -> (d,).

    Permutation-invariant pooling over a set of actor embeddings. The
    gradient flows only to the winning row per column; ties break toward the
    lowest row index.
    """
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"max_over_set: need a 2-d tensor, got {a.shape}")
    if a.shape[0] == 0:
        raise EmptySetError("max_over_set: empty set")
    winners = np.argmax(a.data, axis=0)  # first max wins ties
    cols = np.arange(a.shape[1])
    in_shape = a.shape

    def make_vjp():
        def vjp(g):
            dx = np.zeros(in_shape)
            dx[winners, cols] = g
            return (dx,)

        return vjp

    return _result("max_over_set", a.data[winners, cols], (a,), make_vjp)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, stabilised by the row max."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows: need a 2-d tensor, got {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def make_vjp():
        def vjp(g):
            # dL/dx = y * (g - sum_j g_j y_j) per row
            dot = (g * y).sum(axis=1, keepdims=True)
            return (y * (g - dot),)

        return vjp

    return _result("softmax_rows", y, (a,), make_vjp)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalise each row to zero mean / unit variance, then scale and shift.

    Uses the population variance (divide by d) and eps = 1e-5 inside the
    square root.
    """
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    if a.ndim != 2:
        raise ShapeError(f"layer_norm: need a 2-d input, got {a.shape}")
    d = a.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    x_hat = centered * inv_std
    gd = gain.data

    def make_vjp():
        def vjp(g):
            gx = g * gd
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * x_hat).mean(axis=1, keepdims=True)
            dx = inv_std * (gx - m1 - x_hat * m2)
            return (dx, (g * x_hat).sum(axis=0), g.sum(axis=0))

        return vjp

    return _result("layer_norm", x_hat * gd + bias.data, (a, gain, bias), make_vjp)


def dropout(a: Tensor, rate: float, mode: str, rng=None) -> Tensor:
    """Inverted dropout: keep with prob 1-rate, scale kept values by 1/(1-rate).

    Identity in 'infer' mode and whenever rate == 0. In 'train' mode with a
    positive rate an rng is required; the sampled mask is reused by the
    backward pass.
    """
    a = _as_tensor(a)
    if not (isinstance(rate, (int, float)) and 0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate!r}")
    check_mode(mode)
    if mode == MODE_INFER or rate == 0.0:
        return a
    if rng is None:
        raise UsageError("dropout in train mode with rate > 0 requires an rng")
    keep = rng.random(a.shape) >= rate
    scaled_mask = keep / (1.0 - rate)

    def make_vjp():
        return lambda g: (g * scaled_mask,)

    return _result("dropout", a.data * scaled_mask, (a,), make_vjp)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross entropy over rows, via log-sum-exp.

    labels is a length-m sequence of int class ids for an (m, c) logits
    tensor. Returns a 0-d tensor.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: need (m, c) logits, got {logits.shape}")
    m, c = logits.shape
    if m == 0:
        raise EmptySetError("cross_entropy: no rows")
    labels = np.asarray(labels)
    if labels.shape != (m,):
        raise ShapeError(f"cross_entropy: need {m} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"cross_entropy: labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"cross_entropy: label outside [0, {c}) in {labels.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    total = e.sum(axis=1, keepdims=True)
    log_probs = z - np.log(total)
    rows = np.arange(m)
    loss = -log_probs[rows, labels].mean()
    probs = e / total

    def make_vjp():
        def vjp(g):
            dx = probs.copy()
            dx[rows, labels] -= 1.0
            return (dx * (g / m),)

        return vjp

    return _result("cross_entropy", loss, (logits,), make_vjp)
