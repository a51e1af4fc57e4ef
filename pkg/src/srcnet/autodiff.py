"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records :class:`Node` objects in creation order. Because a
node can only be built from nodes that already exist, creation order is a
topological order and the backward pass is a single reverse sweep.

Besides the ordinary ops the tape carries the custom-gradient nodes used to
train spiking recurrent cells:

``relu_bypass``
    forward ``max(h, 0)``, backward passes the upstream gradient unchanged.
``detach``
    forward copy, backward contributes nothing to the parent.
``spike_atan``
    forward Heaviside ``u > 0``, backward ATan surrogate.

Elementwise ops demand equal shapes. The only broadcasting supported is the
``*_row`` family, where a 1-D parameter row is applied along the last axis of
a batched operand.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, UsageError

DTYPE = np.float64


class Node:
    __slots__ = ("kind", "parents", "value", "grad", "attrs", "requires_grad", "name")

    def __init__(self, kind, parents, value, requires_grad, attrs=None, name=None):
        self.kind = kind
        self.parents = parents
        self.value = value
        self.grad = None
        self.attrs = attrs or {}
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.kind}{label}, shape={self.value.shape})"


# ---------------------------------------------------------------------------
# op definitions: kind -> (forward(values, attrs), vjp(g, values, out, attrs))
# vjp returns one gradient (or None) per parent.


def _check_same(kind, a, b):
    if a.shape != b.shape:
        raise ConfigurationError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def _check_row(kind, x, row):
    if row.ndim != 1 or x.ndim < 1 or x.shape[-1] != row.shape[0]:
        raise ConfigurationError(
            f"{kind}: row operand of shape {row.shape} does not fit last axis of {x.shape}"
        )


def _reduce_rows(g):
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def _fwd_add(v, a):
    _check_same("add", *v)
    return v[0] + v[1]


def _fwd_sub(v, a):
    _check_same("sub", *v)
    return v[0] - v[1]


def _fwd_mul(v, a):
    _check_same("mul", *v)
    return v[0] * v[1]


def _fwd_matvec(v, a):
    w, x = v
    if w.ndim != 2 or x.ndim < 1 or w.shape[1] != x.shape[-1]:
        raise ConfigurationError(f"matvec: matrix {w.shape} incompatible with vector {x.shape}")
    return x @ w.T


def _vjp_matvec(g, v, out, a):
    w, x = v
    gw = g.reshape(-1, w.shape[0]).T @ x.reshape(-1, w.shape[1])
    return gw, g @ w


def _fwd_add_row(v, a):
    _check_row("add_row", *v)
    return v[0] + v[1]


def _fwd_mul_row(v, a):
    _check_row("mul_row", *v)
    return v[0] * v[1]


def _fwd_softmax_xent(v, a):
    logits = v[0]
    targets = a["targets"]
    z = logits.reshape(-1, logits.shape[-1])
    shift = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shift).sum(axis=1))
    rows = np.arange(z.shape[0])
    return np.asarray(np.mean(logsumexp - shift[rows, targets]), dtype=DTYPE)


def _vjp_softmax_xent(g, v, out, a):
    logits = v[0]
    z = logits.reshape(-1, logits.shape[-1])
    p = np.exp(z - z.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(z.shape[0]), a["targets"]] -= 1.0
    return ((g / z.shape[0]) * p).reshape(logits.shape),


def _vjp_spike_atan(g, v, out, a):
    k = a["slope"]
    u = v[0]
    return g * (k / np.pi) / (1.0 + (k * u) ** 2),


_OPS = {
    "add": (_fwd_add, lambda g, v, o, a: (g, g)),
    "sub": (_fwd_sub, lambda g, v, o, a: (g, -g)),
    "mul": (_fwd_mul, lambda g, v, o, a: (g * v[1], g * v[0])),
    "matvec": (_fwd_matvec, _vjp_matvec),
    "add_row": (_fwd_add_row, lambda g, v, o, a: (g, _reduce_rows(g))),
    "mul_row": (_fwd_mul_row, lambda g, v, o, a: (g * v[1], _reduce_rows(g * v[0]))),
    "tanh": (lambda v, a: np.tanh(v[0]), lambda g, v, o, a: (g * (1.0 - o * o),)),
    "sigmoid": (
        lambda v, a: 0.5 * (1.0 + np.tanh(0.5 * v[0])),
        lambda g, v, o, a: (g * o * (1.0 - o),),
    ),
    "relu": (lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: (g * (v[0] > 0),)),
    "relu_bypass": (lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: (g,)),
    "detach": (lambda v, a: v[0].copy(), lambda g, v, o, a: (None,)),
    "scale": (lambda v, a: a["c"] * v[0], lambda g, v, o, a: (a["c"] * g,)),
    "sum": (
        lambda v, a: np.asarray(v[0].sum(), dtype=DTYPE),
        lambda g, v, o, a: (np.full(v[0].shape, g, dtype=DTYPE),),
    ),
    "softmax_cross_entropy": (_fwd_softmax_xent, _vjp_softmax_xent),
    "spike_atan": (lambda v, a: (v[0] > 0).astype(DTYPE), _vjp_spike_atan),
}

OP_KINDS = tuple(_OPS)


class Tape:
    """Ordered record of nodes for one forward/backward pass.

    A tape is not thread-safe; build one per worker.
    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def _record(self, node):
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None):
        """A learnable input. Its gradient lands in ``node.grad``."""
        value = np.array(value, dtype=DTYPE)
        return self._record(Node("leaf", (), value, True, name=name))

    def const(self, value, name=None):
        value = np.asarray(value, dtype=DTYPE)
        return self._record(Node("const", (), value, False, name=name))

    def apply(self, kind, *inputs, **attrs):
        """Create a node of ``kind`` from parent nodes (the generic forward op)."""
        try:
            fwd, _ = _OPS[kind]
        except KeyError:
            raise UsageError(f"unknown op kind {kind!r}; supported: {', '.join(OP_KINDS)}") from None
        for p in inputs:
            if not isinstance(p, Node):
                raise UsageError(f"{kind}: inputs must be Nodes, got {type(p).__name__}")
        value = fwd([p.value for p in inputs], attrs)
        requires_grad = kind != "detach" and any(p.requires_grad for p in inputs)
        return self._record(Node(kind, inputs, value, requires_grad, attrs))

    # thin wrappers, one per op kind
    def add(self, a, b):
        return self.apply("add", a, b)

    def sub(self, a, b):
        return self.apply("sub", a, b)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def matvec(self, w, x):
        return self.apply("matvec", w, x)

    def add_row(self, x, row):
        return self.apply("add_row", x, row)

    def mul_row(self, x, row):
        return self.apply("mul_row", x, row)

    def tanh(self, a):
        return self.apply("tanh", a)

    def sigmoid(self, a):
        return self.apply("sigmoid", a)

    def relu(self, a):
        return self.apply("relu", a)

    def relu_bypass(self, a):
        return self.apply("relu_bypass", a)

    def detach(self, a):
        return self.apply("detach", a)

    def scale(self, a, c):
        return self.apply("scale", a, c=float(c))

    def sum(self, a):
        return self.apply("sum", a)

    def softmax_cross_entropy(self, logits, targets):
        """Mean cross-entropy over the rows of ``logits``; ``targets`` are class indices."""
        n_rows = int(np.prod(logits.shape[:-1], dtype=int))
        targets = np.atleast_1d(np.asarray(targets, dtype=np.intp))
        if targets.shape != (n_rows,):
            raise ConfigurationError(
                f"softmax_cross_entropy: {targets.shape[0]} targets for {n_rows} rows"
            )
        if targets.min() < 0 or targets.max() >= logits.shape[-1]:
            raise ConfigurationError(
                f"softmax_cross_entropy: target out of range [0, {logits.shape[-1]})"
            )
        return self.apply("softmax_cross_entropy", logits, targets=targets)

    def spike_atan(self, u, slope=2.0):
        return self.apply("spike_atan", u, slope=float(slope))

    def backward(self, loss):
        """Accumulate d(loss)/d(node) into ``node.grad`` for every node that needs it.

        Accumulators are reset first, so repeated calls give identical results.
        Returns ``{name: grad}`` for named leaves.
        """
        if loss.value.size != 1 or loss.value.ndim > 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = np.zeros_like(node.value) if node.requires_grad else None
        if not loss.requires_grad:
            return self.leaf_grads()
        loss.grad = np.ones_like(loss.value)

        for node in reversed(self.nodes):
            if not node.parents or not node.requires_grad:
                continue
            _, vjp = _OPS[node.kind]
            grads = vjp(node.grad, [p.value for p in node.parents], node.value, node.attrs)
            for parent, g in zip(node.parents, grads):
                if g is not None and parent.requires_grad:
                    parent.grad += g
        return self.leaf_grads()

    def leaf_grads(self):
        return {n.name: n.grad for n in self.nodes if n.kind == "leaf" and n.name is not None}

    def first_nonfinite(self):
        """The earliest node holding a NaN or Inf, or None."""
        for node in self.nodes:
            if not np.all(np.isfinite(node.value)):
                return node
        return None


def forward_op(tape, kind, *inputs, **attrs):
    return tape.apply(kind, *inputs, **attrs)


def backward(tape, loss):
    return tape.backward(loss)
