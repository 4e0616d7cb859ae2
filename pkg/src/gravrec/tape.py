"""Reverse-mode differentiation over an explicit operation record.

Computations on :class:`Node` operands append primitive operations to a
:class:`Tape`. ``reverse_gradients`` then walks the record backwards once,
accumulating exact vector-Jacobian products, so the gradients match the
recorded discrete forward computation to machine precision. The same public
functions also accept plain numpy arrays, in which case nothing is recorded
and the raw numpy result comes back; higher layers use this to share one
code path between training (recorded) and evaluation (plain).

Design notes:

* The record is append-only and topologically ordered by construction, which
  makes both the backward sweep and :meth:`Tape.replay` single linear passes.
* All values are 64-bit floats. Scalars are numpy 0-d values.
* Gradient accumulation never mutates in place (``grad = grad + g``), so
  vector-Jacobian products are free to return read-only views.
* Domain-specific primitives (the gravity kernel) register themselves via
  :func:`register_op`; the replay machinery picks them up automatically.
"""

from __future__ import annotations

import math
from numbers import Real
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractViolation

__all__ = [
    "Node",
    "Tape",
    "affine",
    "logistic",
    "hyperbolic_tangent",
    "reverse_gradients",
    "as_value",
    "register_op",
]


class _Op(NamedTuple):
    forward: Callable  # (parent_values, ctx) -> value
    vjp: Callable      # (node, upstream_grad) -> tuple of parent grads


_OPS: dict[str, _Op] = {}


def register_op(name: str, forward, vjp) -> None:
    """Register a named primitive so it can be recorded and replayed."""
    if name in _OPS:
        raise ValueError(f"op {name!r} already registered")
    _OPS[name] = _Op(forward, vjp)


class Node:
    """One recorded value: the output of a primitive op, or a leaf."""

    __slots__ = ("tape", "idx", "op", "parents", "ctx", "value", "grad", "name")

    # Make numpy defer to our reflected operators instead of broadcasting
    # over the Node object.
    __array_ufunc__ = None

    def __init__(self, tape, idx, op, parents, ctx, value, name=None):
        self.tape = tape
        self.idx = idx
        self.op = op
        self.parents = parents
        self.ctx = ctx
        self.value = value
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Node {self.idx} op={self.op}{tag} shape={self.shape}>"

    # Arithmetic sugar so generic numeric code (the RK4 stepper in
    # particular) runs unchanged on recorded values.
    def __add__(self, other):
        if isinstance(other, (Node, np.ndarray)):
            return add(self, other)
        if isinstance(other, Real):
            return add_const(self, float(other))
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (Node, np.ndarray)):
            return sub(self, other)
        if isinstance(other, Real):
            return add_const(self, -float(other))
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, (Node, np.ndarray)):
            return sub(other, self)
        if isinstance(other, Real):
            return rsub_const(self, float(other))
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, (Node, np.ndarray)):
            return mul(self, other)
        if isinstance(other, Real):
            return scale(self, float(other))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Real):
            return scale(self, 1.0 / float(other))
        return NotImplemented

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of primitive operations plus designated parameters.

    Single writer during forward recording; replay and backward passes are
    read-only.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def _record(self, op, parents, ctx, value, name=None) -> Node:
        node = Node(self, len(self.nodes), op, parents, ctx, value, name)
        self.nodes.append(node)
        return node

    def parameter(self, name: str, value) -> Node:
        """Designate a named leaf whose gradient will be reported."""
        if name in self.params:
            raise ContractViolation(f"parameter {name!r} already on tape")
        node = self._record("leaf", (), (), np.asarray(value, dtype=float), name)
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        """Record a leaf that participates in the computation but is not a
        parameter; no gradient is reported for it."""
        return self._record("leaf", (), (), np.asarray(value, dtype=float))

    def replay(self) -> list:
        """Re-execute every recorded operation in order and return the
        recomputed values. Leaf values are reused verbatim, so a replayed
        record reproduces the original forward values bit for bit."""
        values: list = [None] * len(self.nodes)
        for node in self.nodes:
            if node.op == "leaf":
                values[node.idx] = node.value
            else:
                parent_values = [values[p.idx] for p in node.parents]
                values[node.idx] = _OPS[node.op].forward(parent_values, node.ctx)
        return values


def as_value(x):
    """Unwrap a Node to its numpy value; pass plain values through."""
    return x.value if isinstance(x, Node) else x


def _tape_of(*args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return None


def _lift(tape: Tape, x):
    return x if isinstance(x, Node) else tape.constant(x)


def _apply(op: str, args, ctx=()):
    """Dispatch one primitive: plain numpy when no argument is recorded,
    otherwise lift everything onto the tape and record."""
    tape = _tape_of(*args)
    forward = _OPS[op].forward
    if tape is None:
        return forward(list(args), ctx)
    nodes = tuple(_lift(tape, a) for a in args)
    value = forward([n.value for n in nodes], ctx)
    return tape._record(op, nodes, ctx, value)


def _unbroadcast(grad, shape):
    """Sum an upstream gradient down to the shape numpy broadcast it from."""
    g = np.asarray(grad)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    if shape == ():
        return np.float64(g)
    return g


# ---------------------------------------------------------------------------
# Primitive definitions. Forward signatures are (parent_values, ctx) so the
# replay pass can re-run them from stored inputs alone.
# ---------------------------------------------------------------------------

def _stable_logistic(x):
    arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(arr)
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(arr.shape) if arr.ndim else np.float64(out[0])


register_op("leaf", lambda vals, ctx: None, lambda node, g: ())

register_op(
    "add",
    lambda v, ctx: v[0] + v[1],
    lambda node, g: (
        _unbroadcast(g, node.parents[0].shape),
        _unbroadcast(g, node.parents[1].shape),
    ),
)

register_op(
    "sub",
    lambda v, ctx: v[0] - v[1],
    lambda node, g: (
        _unbroadcast(g, node.parents[0].shape),
        _unbroadcast(-g, node.parents[1].shape),
    ),
)

register_op(
    "mul",
    lambda v, ctx: v[0] * v[1],
    lambda node, g: (
        _unbroadcast(g * node.parents[1].value, node.parents[0].shape),
        _unbroadcast(g * node.parents[0].value, node.parents[1].shape),
    ),
)

register_op(
    "scale",
    lambda v, ctx: ctx[0] * v[0],
    lambda node, g: (node.ctx[0] * g,),
)

register_op("add_const", lambda v, ctx: v[0] + ctx[0], lambda node, g: (g,))
register_op("rsub_const", lambda v, ctx: ctx[0] - v[0], lambda node, g: (-g,))

register_op(
    "matvec",
    lambda v, ctx: v[0] @ v[1],
    lambda node, g: (np.outer(g, node.parents[1].value), node.parents[0].value.T @ g),
)

register_op(
    "logistic",
    lambda v, ctx: _stable_logistic(v[0]),
    lambda node, g: (g * node.value * (1.0 - node.value),),
)

register_op(
    "tanh",
    lambda v, ctx: np.tanh(v[0]),
    lambda node, g: (g * (1.0 - node.value * node.value),),
)

register_op(
    "exp",
    lambda v, ctx: np.exp(v[0]),
    lambda node, g: (g * node.value,),
)

register_op(
    "log",
    lambda v, ctx: np.log(v[0]),
    lambda node, g: (g / node.parents[0].value,),
)

def _power_vjp(node, g):
    p = node.ctx[0]
    return (g * (p * node.parents[0].value ** (p - 1.0)),)


register_op("power", lambda v, ctx: v[0] ** ctx[0], _power_vjp)

register_op(
    "sum",
    lambda v, ctx: np.float64(np.sum(v[0])),
    lambda node, g: (np.broadcast_to(g, node.parents[0].shape),),
)

register_op(
    "rowsum",
    lambda v, ctx: np.sum(v[0], axis=-1),
    lambda node, g: (np.broadcast_to(np.expand_dims(g, -1), node.parents[0].shape),),
)

register_op(
    "dot",
    lambda v, ctx: np.float64(np.dot(v[0], v[1])),
    lambda node, g: (g * node.parents[1].value, g * node.parents[0].value),
)


def _take_row_vjp(node, g):
    out = np.zeros_like(node.parents[0].value)
    out[node.ctx[0]] = g
    return (out,)


register_op("take_row", lambda v, ctx: v[0][ctx[0]], _take_row_vjp)


def _pick_vjp(node, g):
    out = np.zeros_like(node.parents[0].value)
    out[node.ctx[0]] = g
    return (out,)


register_op("pick", lambda v, ctx: np.float64(v[0][ctx[0]]), _pick_vjp)

register_op(
    "concat_last",
    lambda v, ctx: np.concatenate([v[0], v[1]], axis=-1),
    lambda node, g: (g[..., : node.ctx[0]], g[..., node.ctx[0]:]),
)


def _slice_last_vjp(node, g):
    lo, hi = node.ctx
    out = np.zeros_like(node.parents[0].value)
    out[..., lo:hi] = g
    return (out,)


register_op("slice_last", lambda v, ctx: v[0][..., ctx[0]: ctx[1]], _slice_last_vjp)

register_op(
    "stack_rows",
    lambda v, ctx: np.stack(v, axis=0),
    lambda node, g: tuple(g[i] for i in range(len(node.parents))),
)


# ---------------------------------------------------------------------------
# Public operations. Each accepts Nodes or plain arrays.
# ---------------------------------------------------------------------------

def affine(W, x):
    """Matrix-vector product ``W @ x`` (no bias term).

    Raises :class:`ContractViolation` when the shapes do not conform.
    """
    Wv, xv = as_value(W), as_value(x)
    if np.ndim(Wv) != 2 or np.ndim(xv) != 1 or np.shape(Wv)[1] != np.shape(xv)[0]:
        raise ContractViolation(
            f"affine expects (m,n) @ (n,), got {np.shape(Wv)} @ {np.shape(xv)}"
        )
    return _apply("matvec", (W, x))


def logistic(x):
    """Elementwise 1 / (1 + exp(-x)); every output lies in (0, 1)."""
    return _apply("logistic", (x,))


def hyperbolic_tangent(x):
    """Elementwise tanh; every output lies in (-1, 1)."""
    return _apply("tanh", (x,))


def add(x, y):
    return _apply("add", (x, y))


def sub(x, y):
    return _apply("sub", (x, y))


def mul(x, y):
    return _apply("mul", (x, y))


def scale(x, c: float):
    return _apply("scale", (x,), (float(c),))


def add_const(x, c: float):
    return _apply("add_const", (x,), (float(c),))


def rsub_const(x, c: float):
    """c - x for a plain float c."""
    return _apply("rsub_const", (x,), (float(c),))


def exp(x):
    return _apply("exp", (x,))


def log(x):
    return _apply("log", (x,))


def power(x, p: float):
    """Elementwise x ** p for a plain float exponent (x > 0 in all uses)."""
    return _apply("power", (x,), (float(p),))


def sum_all(x):
    return _apply("sum", (x,))


def rowsum(x):
    """Sum over the last axis."""
    return _apply("rowsum", (x,))


def dot(x, y):
    return _apply("dot", (x, y))


def take_row(matrix, index: int):
    """Row lookup; the gradient scatters back into the indexed row."""
    return _apply("take_row", (matrix,), (int(index),))


def pick(vector, index: int):
    """Single-element lookup returning a scalar."""
    return _apply("pick", (vector,), (int(index),))


def concat_last(x, y):
    """Concatenate along the last axis."""
    nx = np.shape(as_value(x))[-1]
    return _apply("concat_last", (x, y), (nx,))


def slice_last(x, lo: int, hi: int):
    """Contiguous slice of the last axis."""
    return _apply("slice_last", (x,), (int(lo), int(hi)))


def stack_rows(items):
    """Stack equal-shape vectors into a matrix, one per row."""
    items = tuple(items)
    tape = _tape_of(*items)
    if tape is None:
        return np.stack(items, axis=0)
    return _apply("stack_rows", items)


def apply_op(op: str, args, ctx=()):
    """Record or evaluate a registered primitive by name. Hook for
    domain-specific primitives defined outside this module."""
    return _apply(op, args, ctx)


# ---------------------------------------------------------------------------
# Backward sweep.
# ---------------------------------------------------------------------------

def reverse_gradients(record: Tape, output: Node) -> dict[str, np.ndarray]:
    """Exact gradients of a recorded scalar with respect to every parameter.

    The sweep visits nodes in reverse record order, which is a valid reverse
    topological order because the record is append-only. Deterministic for a
    fixed record: accumulation order is the record order.
    """
    if not isinstance(output, Node) or output.tape is not record:
        raise ContractViolation("output is not a node of the given record")
    if np.ndim(output.value) != 0:
        raise ContractViolation(
            f"reverse_gradients needs a scalar output, got shape {output.shape}"
        )

    for node in record.nodes:
        node.grad = None
    output.grad = np.float64(1.0)

    for node in reversed(record.nodes[: output.idx + 1]):
        if node.grad is None or node.op == "leaf":
            continue
        parent_grads = _OPS[node.op].vjp(node, node.grad)
        for parent, g in zip(node.parents, parent_grads):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g

    out = {}
    for name, node in record.params.items():
        if node.grad is None:
            out[name] = np.zeros_like(node.value)
        else:
            out[name] = np.asarray(node.grad, dtype=float).reshape(node.value.shape)
    return out


def finite(x) -> bool:
    """True when every entry of a value (Node or array) is finite."""
    return bool(np.all(np.isfinite(as_value(x))))


def ceil_div_steps(steps_per_unit: float, duration: float, minimum: int = 2) -> int:
    """Step-count rule shared by the drift integrators."""
    return max(int(minimum), int(math.ceil(steps_per_unit * duration)))
