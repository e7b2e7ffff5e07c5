"""Reverse-mode automatic differentiation on an explicit tape.

Values are float64 numpy arrays. Per-sample quantities are carried as
``(n, k)`` matrices, so one tape evaluates a network on a whole collocation
batch. Every backward rule exists twice: a numeric form used by :meth:`Tape.grad`
and a graph form used by :meth:`Tape.grad_nodes`, which appends the adjoint
computation to the tape so that it can be differentiated again.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Invalid sizes, arities or settings."""


class InputError(ValueError):
    """Non-finite or malformed input data."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


LEAF_OPS = ("constant", "input", "parameter")


@dataclass
class Node:
    id: int
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    attr: object = None


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# forward kernels: (parent values, attr) -> value
_FORWARD: dict[str, Callable] = {
    "add": lambda v, a: v[0] + v[1],
    "sub": lambda v, a: v[0] - v[1],
    "mul": lambda v, a: v[0] * v[1],
    "div": lambda v, a: v[0] / v[1],
    "scale": lambda v, a: a * v[0],
    "linear": lambda v, a: v[0] @ v[1].T,
    "linear_t": lambda v, a: v[0] @ v[1],
    "outer": lambda v, a: v[0].T @ v[1],
    "relu": lambda v, a: np.maximum(v[0], 0.0),
    "posclip": lambda v, a: np.maximum(v[0], 0.0),
    "step": lambda v, a: (v[0] > 0.0).astype(np.float64),
    "tanh": lambda v, a: np.tanh(v[0]),
    "sin": lambda v, a: np.sin(v[0]),
    "cos": lambda v, a: np.cos(v[0]),
    "abs": lambda v, a: np.abs(v[0]),
    "sign": lambda v, a: np.sign(v[0]),
    "square": lambda v, a: v[0] * v[0],
    "sum": lambda v, a: np.asarray(v[0].sum()),
    "max": lambda v, a: np.asarray(max(float(x) for x in v)),
    "sum_to": lambda v, a: _unbroadcast(v[0], a),
    "broadcast": lambda v, a: np.broadcast_to(v[0], a),
}


class Tape:
    """Ordered list of nodes; parents always precede children."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.input_ids: list[int] = []
        self.param_ids: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    # -- construction -------------------------------------------------

    def _push(self, op: str, parents: Sequence[int], value, attr=None) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(nid, op, tuple(parents), value, attr))
        return nid

    def _apply(self, op: str, parents: Sequence[int], attr=None) -> int:
        vals = [self.nodes[p].value for p in parents]
        return self._push(op, parents, _as_array(_FORWARD[op](vals, attr)), attr)

    def constant(self, value) -> int:
        return self._push("constant", (), _as_array(value))

    def input(self, value) -> int:
        value = _as_array(value)
        if not np.all(np.isfinite(value)):
            raise InputError("non-finite input")
        nid = self._push("input", (), value)
        self.input_ids.append(nid)
        return nid

    def parameter(self, value) -> int:
        nid = self._push("parameter", (), _as_array(value))
        self.param_ids.append(nid)
        return nid

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def add(self, a: int, b: int) -> int:
        return self._apply("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self._apply("sub", (a, b))

    def mul(self, a: int, b: int) -> int:
        return self._apply("mul", (a, b))

    def div(self, a: int, b: int) -> int:
        return self._apply("div", (a, b))

    def scale(self, a: int, c: float) -> int:
        return self._apply("scale", (a,), float(c))

    def linear(self, x: int, w: int) -> int:
        """Batched matrix-vector product ``x @ w.T`` (rows of x are samples)."""
        return self._apply("linear", (x, w))

    def linear_t(self, g: int, w: int) -> int:
        return self._apply("linear_t", (g, w))

    def outer(self, a: int, b: int) -> int:
        return self._apply("outer", (a, b))

    def relu(self, a: int) -> int:
        return self._apply("relu", (a,))

    def posclip(self, a: int) -> int:
        return self._apply("posclip", (a,))

    def step(self, a: int) -> int:
        return self._apply("step", (a,))

    def tanh(self, a: int) -> int:
        return self._apply("tanh", (a,))

    def sin(self, a: int) -> int:
        return self._apply("sin", (a,))

    def cos(self, a: int) -> int:
        return self._apply("cos", (a,))

    def abs(self, a: int) -> int:
        return self._apply("abs", (a,))

    def sign(self, a: int) -> int:
        return self._apply("sign", (a,))

    def square(self, a: int) -> int:
        return self._apply("square", (a,))

    def sum(self, a: int) -> int:
        return self._apply("sum", (a,))

    def max(self, items: Sequence[int]) -> int:
        if not items:
            raise ConfigurationError("max over an empty set")
        return self._apply("max", tuple(items))

    def sum_to(self, a: int, shape: tuple[int, ...]) -> int:
        return self._apply("sum_to", (a,), tuple(shape))

    def broadcast(self, a: int, shape: tuple[int, ...]) -> int:
        return self._apply("broadcast", (a,), tuple(shape))

    # -- evaluation ---------------------------------------------------

    def forward(self, inputs: Sequence, params: Sequence, output: int | None = None) -> np.ndarray:
        """Re-evaluate the whole tape with new input and parameter values.

        ``inputs`` and ``params`` are matched positionally to ``input_ids`` and
        ``param_ids``. Returns the value of ``output`` (default: last node).
        """
        if len(inputs) != len(self.input_ids) or len(params) != len(self.param_ids):
            raise ConfigurationError(
                f"expected {len(self.input_ids)} inputs and {len(self.param_ids)} params, "
                f"got {len(inputs)} and {len(params)}"
            )
        for nid, val in zip(self.input_ids, inputs):
            val = _as_array(val)
            if val.shape != self.nodes[nid].value.shape:
                raise ConfigurationError(f"input {nid}: shape {val.shape} != {self.nodes[nid].value.shape}")
            if not np.all(np.isfinite(val)):
                raise InputError("non-finite input")
            self.nodes[nid].value = val
        for nid, val in zip(self.param_ids, params):
            val = _as_array(val)
            if val.shape != self.nodes[nid].value.shape:
                raise ConfigurationError(f"param {nid}: shape {val.shape} != {self.nodes[nid].value.shape}")
            self.nodes[nid].value = val
        for node in self.nodes:
            if node.op in LEAF_OPS:
                continue
            vals = [self.nodes[p].value for p in node.parents]
            node.value = _as_array(_FORWARD[node.op](vals, node.attr))
        out = len(self.nodes) - 1 if output is None else output
        return self.nodes[out].value

    def _active(self, output: int, wrt: Sequence[int]) -> np.ndarray:
        # nodes that lie on some path from a wrt node to output
        depends = np.zeros(output + 1, dtype=bool)
        for w in wrt:
            if w <= output:
                depends[w] = True
        for node in self.nodes[: output + 1]:
            if not depends[node.id] and node.parents:
                depends[node.id] = any(depends[p] for p in node.parents)
        return depends

    def grad(self, output: int, wrt: Sequence[int], seed=None) -> list[np.ndarray]:
        """Numeric reverse sweep. Returns d output / d node for each node in wrt.

        ``output`` must be scalar unless ``seed`` (same shape as the output) is
        given, in which case the seeded vector-Jacobian product is returned.
        """
        out_val = self.nodes[output].value
        if seed is None:
            if out_val.size != 1:
                raise ContractError("grad requires a scalar output or an explicit seed")
            seed = np.ones_like(out_val)
        depends = self._active(output, wrt)
        adj: dict[int, np.ndarray] = {output: _as_array(seed)}
        for nid in range(output, -1, -1):
            g = adj.get(nid)
            if g is None or not depends[nid]:
                continue
            node = self.nodes[nid]
            if node.op in LEAF_OPS:
                continue
            pgrads = _VJP[node.op](self, node, g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not depends[p]:
                    continue
                if p in adj:
                    adj[p] = adj[p] + pg
                else:
                    adj[p] = pg
        return [adj[w] if w in adj else np.zeros_like(self.nodes[w].value) for w in wrt]

    def grad_nodes(self, output: int, wrt: Sequence[int], seed: int | None = None) -> list[int]:
        """Graph-extending reverse sweep.

        Appends the adjoint computation to the tape and returns node ids whose
        values are d output / d wrt. Those nodes can be differentiated again.
        ``seed`` is a node id with the output's shape (defaults to ones).
        """
        if seed is None:
            seed = self.constant(np.ones_like(self.nodes[output].value))
        depends = self._active(output, wrt)
        adj: dict[int, int] = {output: seed}
        for nid in range(output, -1, -1):
            g = adj.get(nid)
            if g is None or not depends[nid]:
                continue
            node = self.nodes[nid]
            if node.op in LEAF_OPS:
                continue
            needs = [depends[p] for p in node.parents]
            pgrads = _GRAPH_VJP[node.op](self, node, g, needs)
            for p, pg, need in zip(node.parents, pgrads, needs):
                if pg is None or not need:
                    continue
                adj[p] = self.add(adj[p], pg) if p in adj else pg
        out = []
        for w in wrt:
            if w in adj:
                out.append(adj[w])
            else:
                out.append(self.constant(np.zeros_like(self.nodes[w].value)))
        return out


# -- numeric vector-Jacobian products ----------------------------------


def _pv(tape: Tape, node: Node, i: int) -> np.ndarray:
    return tape.nodes[node.parents[i]].value


def _vjp_add(t, n, g):
    return [_unbroadcast(g, _pv(t, n, 0).shape), _unbroadcast(g, _pv(t, n, 1).shape)]


def _vjp_sub(t, n, g):
    return [_unbroadcast(g, _pv(t, n, 0).shape), _unbroadcast(-g, _pv(t, n, 1).shape)]


def _vjp_mul(t, n, g):
    a, b = _pv(t, n, 0), _pv(t, n, 1)
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _vjp_div(t, n, g):
    a, b = _pv(t, n, 0), _pv(t, n, 1)
    return [_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)]


def _vjp_max(t, n, g):
    vals = [float(t.nodes[p].value) for p in n.parents]
    k = int(np.argmax(vals))  # first maximiser on ties
    return [g if i == k else None for i in range(len(vals))]


_VJP: dict[str, Callable] = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "scale": lambda t, n, g: [n.attr * g],
    "linear": lambda t, n, g: [g @ _pv(t, n, 1), g.T @ _pv(t, n, 0)],
    "linear_t": lambda t, n, g: [g @ _pv(t, n, 1).T, _pv(t, n, 0).T @ g],
    "outer": lambda t, n, g: [_pv(t, n, 1) @ g.T, _pv(t, n, 0) @ g],
    "relu": lambda t, n, g: [g * (_pv(t, n, 0) > 0.0)],
    "posclip": lambda t, n, g: [g * (_pv(t, n, 0) > 0.0)],
    "step": lambda t, n, g: [None],
    "tanh": lambda t, n, g: [g * (1.0 - n.value * n.value)],
    "sin": lambda t, n, g: [g * np.cos(_pv(t, n, 0))],
    "cos": lambda t, n, g: [-g * np.sin(_pv(t, n, 0))],
    "abs": lambda t, n, g: [g * np.sign(_pv(t, n, 0))],
    "sign": lambda t, n, g: [None],
    "square": lambda t, n, g: [2.0 * g * _pv(t, n, 0)],
    "sum": lambda t, n, g: [np.broadcast_to(g, _pv(t, n, 0).shape)],
    "max": _vjp_max,
    "sum_to": lambda t, n, g: [np.broadcast_to(g, _pv(t, n, 0).shape)],
    "broadcast": lambda t, n, g: [_unbroadcast(g, _pv(t, n, 0).shape)],
}


# -- graph vector-Jacobian products --------------------------------------


def _fit(tape: Tape, g: int, shape: tuple[int, ...]) -> int:
    if tape.nodes[g].value.shape == shape:
        return g
    return tape.sum_to(g, shape)


def _gshape(tape: Tape, node: Node, i: int) -> tuple[int, ...]:
    return tape.nodes[node.parents[i]].value.shape


def _gvjp_add(t, n, g, needs):
    return [_fit(t, g, _gshape(t, n, 0)) if needs[0] else None,
            _fit(t, g, _gshape(t, n, 1)) if needs[1] else None]


def _gvjp_sub(t, n, g, needs):
    return [_fit(t, g, _gshape(t, n, 0)) if needs[0] else None,
            _fit(t, t.scale(g, -1.0), _gshape(t, n, 1)) if needs[1] else None]


def _gvjp_mul(t, n, g, needs):
    a, b = n.parents
    return [_fit(t, t.mul(g, b), _gshape(t, n, 0)) if needs[0] else None,
            _fit(t, t.mul(g, a), _gshape(t, n, 1)) if needs[1] else None]


def _gvjp_div(t, n, g, needs):
    a, b = n.parents
    da = _fit(t, t.div(g, b), _gshape(t, n, 0)) if needs[0] else None
    db = None
    if needs[1]:
        db = _fit(t, t.scale(t.div(t.mul(g, a), t.square(b)), -1.0), _gshape(t, n, 1))
    return [da, db]


def _gvjp_linear(t, n, g, needs):
    x, w = n.parents
    return [t.linear_t(g, w) if needs[0] else None, t.outer(g, x) if needs[1] else None]


def _gvjp_linear_t(t, n, g, needs):
    a, w = n.parents
    return [t.linear(g, w) if needs[0] else None, t.outer(a, g) if needs[1] else None]


def _gvjp_outer(t, n, g, needs):
    a, b = n.parents
    return [t.linear(b, g) if needs[0] else None, t.linear_t(a, g) if needs[1] else None]


def _gvjp_tanh(t, n, g, needs):
    one = t.constant(1.0)
    return [t.mul(g, t.sub(one, t.square(n.id)))]


def _gvjp_max(t, n, g, needs):
    vals = [float(t.nodes[p].value) for p in n.parents]
    k = int(np.argmax(vals))
    return [g if i == k else None for i in range(len(vals))]


_GRAPH_VJP: dict[str, Callable] = {
    "add": _gvjp_add,
    "sub": _gvjp_sub,
    "mul": _gvjp_mul,
    "div": _gvjp_div,
    "scale": lambda t, n, g, needs: [t.scale(g, n.attr)],
    "linear": _gvjp_linear,
    "linear_t": _gvjp_linear_t,
    "outer": _gvjp_outer,
    # activation masks are frozen at the forward values
    "relu": lambda t, n, g, needs: [t.mul(g, t.step(n.parents[0]))],
    "posclip": lambda t, n, g, needs: [t.mul(g, t.step(n.parents[0]))],
    "step": lambda t, n, g, needs: [None],
    "tanh": _gvjp_tanh,
    "sin": lambda t, n, g, needs: [t.mul(g, t.cos(n.parents[0]))],
    "cos": lambda t, n, g, needs: [t.scale(t.mul(g, t.sin(n.parents[0])), -1.0)],
    "abs": lambda t, n, g, needs: [t.mul(g, t.sign(n.parents[0]))],
    "sign": lambda t, n, g, needs: [None],
    "square": lambda t, n, g, needs: [t.scale(t.mul(g, n.parents[0]), 2.0)],
    "sum": lambda t, n, g, needs: [t.broadcast(g, _gshape(t, n, 0))],
    "max": _gvjp_max,
    "sum_to": lambda t, n, g, needs: [t.broadcast(g, _gshape(t, n, 0))],
    "broadcast": lambda t, n, g, needs: [_fit(t, g, _gshape(t, n, 0))],
}


def forward(tape: Tape, inputs: Sequence, params: Sequence, output: int | None = None) -> np.ndarray:
    return tape.forward(inputs, params, output)


def grad(tape: Tape, output: int, wrt: Sequence[int]) -> list[np.ndarray]:
    return tape.grad(output, wrt)


def input_grad_node(tape: Tape, output: int, input_id: int) -> int:
    """Append a subgraph computing d output / d input and return its node id.

    Rows of a batched output are treated as independent samples, so for an
    ``(n, 1)`` output and ``(n, d)`` input the result holds per-sample input
    gradients. The returned node is differentiable with respect to parameters.
    """
    if input_id not in tape.input_ids:
        raise ContractError(f"node {input_id} is not a declared input")
    return tape.grad_nodes(output, [input_id])[0]
