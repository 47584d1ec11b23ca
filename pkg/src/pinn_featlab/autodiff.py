"""Scalar reverse-mode automatic differentiation over an explicit expression graph.

Differentiation is source-to-source: :func:`derive` appends new nodes that
compute the derivative, so the result can itself be differentiated. This is
what a PDE residual needs (second derivatives in the inputs, then first
derivatives of the residual in the parameters).

Example
-------
>>> g = ExprGraph()
>>> x = g.input("x", 2.0)
>>> y = x ** 3
>>> d2 = derive(g, derive(g, y, x), x)
>>> g.value(d2)
12.0
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GraphError",
    "ExprGraph",
    "Node",
    "KINDS",
    "derive",
    "grad_all",
    "exp",
    "log",
    "sin",
    "cos",
    "tanh",
    "sqrt",
    "absolute",
    "maximum",
    "heaviside",
]

KINDS = (
    "const", "input", "param",
    "add", "sub", "mul", "div", "neg",
    "powi", "powr",
    "exp", "log", "sin", "cos", "tanh", "sqrt", "abs", "max",
    "heaviside",
)
LEAF_KINDS = ("input", "param")


class GraphError(ValueError):
    """Invalid graph construction or misuse of a derivative request."""


class Node:
    """Handle to one node of an :class:`ExprGraph`.

    Supports the usual arithmetic operators so expressions can be written
    naturally; every operator appends exactly one node.
    """

    __slots__ = ("graph", "id")

    def __init__(self, graph: "ExprGraph", id: int):
        self.graph = graph
        self.id = id

    @property
    def value(self) -> float:
        return self.graph._values[self.id]

    @property
    def kind(self) -> str:
        return self.graph.kinds[self.id]

    def _lift(self, other) -> "Node":
        if isinstance(other, Node):
            if other.graph is not self.graph:
                raise GraphError("operands belong to different graphs")
            return other
        return self.graph.constant(float(other))

    def __add__(self, other):
        return self.graph.op("add", self, self._lift(other))

    def __radd__(self, other):
        return self.graph.op("add", self._lift(other), self)

    def __sub__(self, other):
        return self.graph.op("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.op("sub", self._lift(other), self)

    def __mul__(self, other):
        return self.graph.op("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.graph.op("mul", self._lift(other), self)

    def __truediv__(self, other):
        return self.graph.op("div", self, self._lift(other))

    def __rtruediv__(self, other):
        return self.graph.op("div", self._lift(other), self)

    def __neg__(self):
        return self.graph.op("neg", self)

    def __pow__(self, p):
        if isinstance(p, Node):
            raise GraphError("exponent must be a number, not a node")
        if float(p).is_integer():
            return self.graph.op("powi", self, payload=int(p))
        return self.graph.op("powr", self, payload=float(p))

    # numpy calls these when applying ufuncs to object arrays of nodes
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def tanh(self):
        return tanh(self)

    def sqrt(self):
        return sqrt(self)

    def __abs__(self):
        return absolute(self)

    def __repr__(self):
        return f"Node({self.id}, {self.kind}, value={self.value!r})"


def _evaluate(kind: str, a: Sequence[float], payload) -> float:
    if kind == "add":
        return a[0] + a[1]
    if kind == "sub":
        return a[0] - a[1]
    if kind == "mul":
        return a[0] * a[1]
    if kind == "div":
        return float(np.float64(a[0]) / np.float64(a[1]))
    if kind == "neg":
        return -a[0]
    if kind == "powi":
        return float(np.float64(a[0]) ** payload) if payload >= 0 else float(1.0 / np.float64(a[0]) ** -payload)
    if kind == "powr":
        return float(np.power(np.float64(a[0]), payload))
    if kind == "exp":
        return float(np.exp(a[0]))
    if kind == "log":
        return float(np.log(np.float64(a[0])))
    if kind == "sin":
        return math.sin(a[0])
    if kind == "cos":
        return math.cos(a[0])
    if kind == "tanh":
        return math.tanh(a[0])
    if kind == "sqrt":
        return float(np.sqrt(np.float64(a[0])))
    if kind == "abs":
        return abs(a[0])
    if kind == "max":
        return a[0] if a[0] > payload else float(payload)
    if kind == "heaviside":
        return 1.0 if a[0] > 0.0 else 0.0
    raise GraphError(f"unknown node kind {kind!r}")


class ExprGraph:
    """Append-only scalar computation graph with eagerly evaluated values.

    Node ids are topological by construction: a node's parents always have
    smaller ids. Leaves are deduplicated by name; nothing else is.
    """

    def __init__(self):
        self.kinds: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.payload: list = []
        self._values: list[float] = []
        self._leaves: dict[tuple[str, str], int] = {}

    def __len__(self):
        return len(self.kinds)

    @property
    def values(self) -> np.ndarray:
        return np.array(self._values, dtype=np.float64)

    def node(self, id: int) -> Node:
        if not 0 <= id < len(self.kinds):
            raise GraphError(f"node id {id} out of range")
        return Node(self, id)

    def value(self, node: Node | int) -> float:
        return self._values[node.id if isinstance(node, Node) else node]

    def _append(self, kind, parents, payload, value) -> Node:
        self.kinds.append(kind)
        self.parents.append(parents)
        self.payload.append(payload)
        self._values.append(value)
        return Node(self, len(self.kinds) - 1)

    def constant(self, value: float) -> Node:
        return self._append("const", (), float(value), float(value))

    def _leaf(self, kind: str, name: str, value: float | None) -> Node:
        key = (kind, name)
        if key in self._leaves:
            id = self._leaves[key]
            if value is not None:
                self._values[id] = float(value)
            return Node(self, id)
        if value is None:
            raise GraphError(f"new leaf {name!r} needs a value")
        node = self._append(kind, (), name, float(value))
        self._leaves[key] = node.id
        return node

    def input(self, name: str, value: float | None = None) -> Node:
        return self._leaf("input", name, value)

    def param(self, name: str, value: float | None = None) -> Node:
        return self._leaf("param", name, value)

    def op(self, kind: str, *args: Node | int, payload=None) -> Node:
        """Append one primitive node; parents may be nodes or raw ids."""
        if kind not in KINDS or kind in ("const",) + LEAF_KINDS:
            raise GraphError(f"{kind!r} is not an operation kind")
        ids = []
        for a in args:
            id = a.id if isinstance(a, Node) else a
            if isinstance(a, Node) and a.graph is not self:
                raise GraphError("parent belongs to a different graph")
            if not isinstance(id, (int, np.integer)) or not 0 <= id < len(self.kinds):
                raise GraphError(f"invalid parent id {id!r}")
            ids.append(int(id))
        arity = 2 if kind in ("add", "sub", "mul", "div") else 1
        if len(ids) != arity:
            raise GraphError(f"{kind} takes {arity} parent(s), got {len(ids)}")
        if kind in ("powi", "powr", "max") and payload is None:
            raise GraphError(f"{kind} needs a scalar payload")
        with np.errstate(all="ignore"):
            value = _evaluate(kind, [self._values[i] for i in ids], payload)
        return self._append(kind, tuple(ids), payload, value)

    def leaf_names(self, kind: str = "param") -> list[str]:
        return [name for (k, name) in self._leaves if k == kind]

    def evaluate(self, leaf_values: dict[str, float] | None = None) -> np.ndarray:
        """Recompute every node, optionally after resetting leaf values by name."""
        if leaf_values:
            for name, v in leaf_values.items():
                hit = [self._leaves[k] for k in (("input", name), ("param", name)) if k in self._leaves]
                if not hit:
                    raise GraphError(f"no leaf named {name!r}")
                for id in hit:
                    self._values[id] = float(v)
        vals = self._values
        with np.errstate(all="ignore"):
            for i, kind in enumerate(self.kinds):
                if kind == "const" or kind in LEAF_KINDS:
                    continue
                vals[i] = _evaluate(kind, [vals[p] for p in self.parents[i]], self.payload[i])
        return self.values


def _unary(kind):
    mfun = {
        "exp": math.exp, "log": math.log, "sin": math.sin, "cos": math.cos,
        "tanh": math.tanh, "sqrt": math.sqrt, "abs": abs,
    }[kind]
    nfun = {
        "exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos,
        "tanh": np.tanh, "sqrt": np.sqrt, "abs": np.abs,
    }[kind]

    def f(a):
        if isinstance(a, Node):
            return a.graph.op(kind, a)
        if isinstance(a, np.ndarray):
            return nfun(a)
        return mfun(a)

    f.__name__ = kind
    return f


exp = _unary("exp")
log = _unary("log")
sin = _unary("sin")
cos = _unary("cos")
tanh = _unary("tanh")
sqrt = _unary("sqrt")
absolute = _unary("abs")


def maximum(a, s: float):
    """max(a, s) for a node or number ``a`` and a fixed scalar ``s``."""
    if isinstance(a, Node):
        return a.graph.op("max", a, payload=float(s))
    return np.maximum(a, s)


def heaviside(a):
    """Indicator of a > 0; used for the subgradients of abs and max."""
    if isinstance(a, Node):
        return a.graph.op("heaviside", a)
    return np.where(np.asarray(a) > 0.0, 1.0, 0.0)


def _depends_on(g: ExprGraph, wrt: int, upto: int) -> list[bool]:
    dep = [False] * (upto + 1)
    dep[wrt] = True
    for i in range(wrt + 1, upto + 1):
        for p in g.parents[i]:
            if dep[p]:
                dep[i] = True
                break
    return dep


def _scale(a: Node, c: float) -> Node:
    if c == 1.0:
        return a
    if c == -1.0:
        return -a
    return a * c


def _local_terms(g: ExprGraph, i: int, a: Node) -> list[tuple[int, Node]]:
    """(parent id, adjoint contribution) pairs for node ``i`` given its adjoint ``a``."""
    kind = g.kinds[i]
    ps = g.parents[i]
    me = Node(g, i)
    if kind == "add":
        return [(ps[0], a), (ps[1], a)]
    if kind == "sub":
        return [(ps[0], a), (ps[1], -a)]
    if kind == "mul":
        return [(ps[0], a * Node(g, ps[1])), (ps[1], a * Node(g, ps[0]))]
    if kind == "div":
        den = Node(g, ps[1])
        return [(ps[0], a / den), (ps[1], -(a * me) / den)]
    if kind == "neg":
        return [(ps[0], -a)]
    if kind == "powi":
        n = g.payload[i]
        x = Node(g, ps[0])
        if n == 0:
            return []
        if n == 1:
            return [(ps[0], a)]
        base = x if n == 2 else x ** (n - 1)
        return [(ps[0], _scale(a * base, float(n)))]
    if kind == "powr":
        p = g.payload[i]
        return [(ps[0], _scale(a * (Node(g, ps[0]) ** (p - 1.0)), p))]
    if kind == "exp":
        return [(ps[0], a * me)]
    if kind == "log":
        return [(ps[0], a / Node(g, ps[0]))]
    if kind == "sin":
        return [(ps[0], a * cos(Node(g, ps[0])))]
    if kind == "cos":
        return [(ps[0], -(a * sin(Node(g, ps[0]))))]
    if kind == "tanh":
        return [(ps[0], a * (1.0 - me * me))]
    if kind == "sqrt":
        return [(ps[0], a / (me * 2.0))]
    if kind == "abs":
        x = Node(g, ps[0])
        return [(ps[0], a * (heaviside(x) - heaviside(-x)))]
    if kind == "max":
        x = Node(g, ps[0])
        return [(ps[0], a * heaviside(x - g.payload[i]))]
    # heaviside is locally constant
    return []


def derive(graph: ExprGraph, output: Node, wrt: Node) -> Node:
    """Return a node equal to d(output)/d(wrt), built from new graph nodes."""
    if wrt.graph is not graph or output.graph is not graph:
        raise GraphError("nodes belong to a different graph")
    if graph.kinds[wrt.id] not in LEAF_KINDS:
        raise GraphError(f"can only differentiate with respect to a leaf, got {graph.kinds[wrt.id]!r}")
    out = output.id
    if wrt.id > out:
        return graph.constant(0.0)
    dep = _depends_on(graph, wrt.id, out)
    if not dep[out]:
        return graph.constant(0.0)
    adj: dict[int, Node] = {out: graph.constant(1.0)}
    for i in range(out, wrt.id, -1):
        a = adj.pop(i, None)
        if a is None or not dep[i]:
            continue
        for p, term in _local_terms(graph, i, a):
            if not dep[p]:
                continue
            adj[p] = adj[p] + term if p in adj else term
    return adj.get(wrt.id, graph.constant(0.0))


def _local_partials(kind, x: list[float], y: float, payload) -> list[float]:
    if kind == "add":
        return [1.0, 1.0]
    if kind == "sub":
        return [1.0, -1.0]
    if kind == "mul":
        return [x[1], x[0]]
    if kind == "div":
        return [1.0 / x[1], -y / x[1]]
    if kind == "neg":
        return [-1.0]
    if kind == "powi":
        n = payload
        if n == 0:
            return [0.0]
        if n == 1:
            return [1.0]
        return [n * _evaluate("powi", [x[0]], n - 1)]
    if kind == "powr":
        return [payload * float(np.power(np.float64(x[0]), payload - 1.0))]
    if kind == "exp":
        return [y]
    if kind == "log":
        return [1.0 / x[0]]
    if kind == "sin":
        return [math.cos(x[0])]
    if kind == "cos":
        return [-math.sin(x[0])]
    if kind == "tanh":
        return [1.0 - y * y]
    if kind == "sqrt":
        return [1.0 / (y * 2.0)]
    if kind == "abs":
        return [(1.0 if x[0] > 0 else 0.0) - (1.0 if x[0] < 0 else 0.0)]
    if kind == "max":
        return [1.0 if x[0] - payload > 0 else 0.0]
    return [0.0] * len(x)


def grad_all(graph: ExprGraph, output: Node, wrt: Iterable[Node]) -> np.ndarray:
    """Gradient of ``output`` with respect to every node in ``wrt``, one reverse sweep."""
    wrt = list(wrt)
    for w in wrt:
        if graph.kinds[w.id] not in LEAF_KINDS:
            raise GraphError("grad_all targets must be leaves")
    out = output.id
    vals = graph._values
    adj = np.zeros(out + 1)
    adj[out] = 1.0
    with np.errstate(all="ignore"):
        for i in range(out, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            ps = graph.parents[i]
            if not ps:
                continue
            xs = [vals[p] for p in ps]
            for p, d in zip(ps, _local_partials(graph.kinds[i], xs, vals[i], graph.payload[i])):
                adj[p] += a * d
    return np.array([adj[w.id] if w.id <= out else 0.0 for w in wrt])
