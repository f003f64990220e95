"""Small reverse-mode autodiff engine over numpy arrays, plus an MLP and Adam.

Everything is float64. A :class:`Node` wraps an array and remembers how it was
produced; :func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "_backward", "name")

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value
    return Node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)),
    )


def neg(a) -> Node:
    a = as_node(a)
    return Node(-a.value, (a,), lambda g: (-g,))


def square(a) -> Node:
    a = as_node(a)
    return Node(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def matmul(a, b) -> Node:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading dims."""
    a, b = as_node(a), as_node(b)
    if b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ b.value.T
        a2 = a.value.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Node(a.value @ b.value, (a, b), backward)


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return Node(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return Node(out, (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = as_node(a)
    return Node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Node:
    a = as_node(a)
    out = np.sqrt(a.value)
    return Node(out, (a,), lambda g: (g * 0.5 / out,))


def softplus(a) -> Node:
    a = as_node(a)
    x = a.value
    out = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return Node(out, (a,), lambda g: (g * sig,))


def sum_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Node(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Node:
    a = as_node(a)
    return Node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Node:
    a = as_node(a)

    def backward(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return (out,)

    return Node(a.value[index], (a,), backward)


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    ax = axis % nodes[0].ndim
    sizes = [n.shape[ax] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return Node(np.concatenate([n.value for n in nodes], axis=ax), tuple(nodes), backward)


def logsumexp(a, axis: int = -1) -> Node:
    a = as_node(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(a.value - m)
    total = s.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis)
    soft = s / total
    return Node(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,))


def softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(a.value - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Node(out, (a,), backward)


def huber(residual, delta: float) -> Node:
    """Elementwise Huber penalty: ``e**2/2`` inside ``|e| <= delta``, linear outside."""
    r = as_node(residual)
    e = r.value
    small = np.abs(e) <= delta
    out = np.where(small, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))
    slope = np.where(small, e, delta * np.sign(e))
    return Node(out, (r,), lambda g: (g * slope,))


def pinball(residual, tau: float) -> Node:
    """Elementwise quantile loss of ``residual = target - prediction``."""
    r = as_node(residual)
    e = r.value
    below = e < 0.0
    out = np.where(below, (tau - 1.0) * e, tau * e)
    slope = np.where(below, tau - 1.0, tau)
    return Node(out, (r,), lambda g: (g * slope,))


# ---------------------------------------------------------------------------
# backward pass


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, wrt: Iterable[Node] | None = None) -> list[np.ndarray] | None:
    """Backpropagate from a scalar ``loss``.

    Every node reachable from ``loss`` gets its ``.grad`` overwritten. If
    ``wrt`` is given, the gradients of those nodes are returned in order;
    nodes the loss does not depend on get exact zeros.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.value)
        node.grad = g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    if wrt is None:
        return None
    reachable = {id(n) for n in order}
    out = []
    for p in wrt:
        if id(p) not in reachable:
            p.grad = np.zeros_like(p.value)
        out.append(p.grad)
    return out


# ---------------------------------------------------------------------------
# MLP


ACTIVATIONS = ("tanh", "linear")


@dataclass
class Layer:
    weight: Node
    bias: Node
    activation: str


class Mlp:
    """Fully connected network; hidden layers use tanh, the last is linear by default."""

    def __init__(self, layers: list[Layer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError(f"layer dims {prev.weight.shape} and {nxt.weight.shape} do not chain")
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
        self.layers = layers

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator, final: str = "linear", name: str = "mlp") -> "Mlp":
        layers = []
        for i, (n_in, n_out) in enumerate(zip(dims, dims[1:])):
            limit = math.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_in, n_out))
            act = final if i == len(dims) - 2 else "tanh"
            layers.append(Layer(Node(w, name=f"{name}.{i}.w"), Node(np.zeros(n_out), name=f"{name}.{i}.b"), act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def params(self) -> list[Node]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.params)

    def arch(self) -> list[dict]:
        return [
            {"in": l.weight.shape[0], "out": l.weight.shape[1], "activation": l.activation} for l in self.layers
        ]

    def __call__(self, x) -> Node:
        return forward(self, x)

    def copy(self, name: str | None = None) -> "Mlp":
        layers = []
        for i, l in enumerate(self.layers):
            wname = f"{name}.{i}.w" if name else l.weight.name
            bname = f"{name}.{i}.b" if name else l.bias.name
            layers.append(Layer(Node(l.weight.value.copy(), name=wname), Node(l.bias.value.copy(), name=bname), l.activation))
        return Mlp(layers)

    def to_dict(self) -> dict:
        return {"arch": self.arch(), "params": [p.value.ravel().tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, data: dict, name: str = "mlp") -> "Mlp":
        arch, flat = data["arch"], data["params"]
        if len(flat) != 2 * len(arch):
            raise ValueError("checkpoint params do not match arch")
        layers = []
        for i, spec in enumerate(arch):
            w = np.asarray(flat[2 * i], dtype=np.float64).reshape(spec["in"], spec["out"])
            b = np.asarray(flat[2 * i + 1], dtype=np.float64).reshape(spec["out"])
            layers.append(Layer(Node(w, name=f"{name}.{i}.w"), Node(b, name=f"{name}.{i}.b"), spec["activation"]))
        return cls(layers)


def forward(mlp: Mlp, x) -> Node:
    h = as_node(x)
    if h.shape[-1] != mlp.in_dim:
        raise ShapeError(f"input has {h.shape[-1]} features, network expects {mlp.in_dim}")
    for layer in mlp.layers:
        h = matmul(h, layer.weight) + layer.bias
        if layer.activation == "tanh":
            h = tanh(h)
    return h


def save_checkpoint(path, arch: dict, params: Sequence[Node], meta: dict | None = None) -> None:
    """Write ``{"version": 1, "arch": ..., "params": [...]}``; floats use repr so values round-trip exactly.

    ``meta`` (provenance such as seed and config hash) is stored verbatim and ignored on load.
    """
    payload = {"version": 1, "arch": arch, "params": [p.value.ravel().tolist() for p in params]}
    if meta:
        payload["meta"] = meta
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {data.get('version')!r}")
    return data


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: Sequence[Node], grads: Sequence[np.ndarray]) -> None:
        """Apply one bias-corrected update in place (values are replaced, not mutated)."""
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        if len(params) != len(self.m):
            raise ShapeError("parameter list changed between steps")
        for i, (p, g) in enumerate(zip(params, grads)):
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {p.name or i}")
            if g.shape != p.value.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(state: Adam, params: Sequence[Node], grads: Sequence[np.ndarray]) -> list[Node]:
    state.step(params, grads)
    return list(params)
