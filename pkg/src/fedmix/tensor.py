"""Tensors and the reverse-mode differentiation tape.

A Tensor wraps a numpy array plus an optional gradient buffer. Every
primitive in :mod:`fedmix.ops` attaches a Node to its output while gradient
tracking is on; ``Graph.trace`` collects the nodes reachable from a root in
topological order and ``backward`` walks them exactly once in reverse,
accumulating gradients into every tensor that requires them.

Graphs are rebuilt on every forward pass (define-by-run). A tensor and its
graph are confined to a single thread; parallelism, if any, lives above
this module.
"""

from __future__ import annotations

import contextlib
import weakref
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float64

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (reference-model forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One executed primitive: operands, output, and its backward rule.

    ``vjp`` maps the output gradient to a tuple of input gradients aligned
    with ``inputs`` (``None`` for non-differentiable operands). The output
    link is weak: strong references run only child-to-parent (tensor to
    node to operand tensors), so an entire graph is freed by reference
    counting as soon as its root goes out of scope — no cycles for the
    garbage collector to find, which matters when each step's graph holds
    megabytes of activations.
    """

    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op: str, inputs: Sequence["Tensor"], output: "Tensor",
                 vjp: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = weakref.ref(output)
        self.vjp = vjp


class Tensor:
    """N-dimensional float array participating in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(Graph.trace(self), self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Arithmetic operators are attached by fedmix.ops at import time so the
    # primitives live in one module and the graph rules stay in one place.


class Graph:
    """Tape of executed primitives, topologically ordered from the leaves up."""

    __slots__ = ("nodes",)

    def __init__(self, nodes: Iterable[Node] = ()):
        self.nodes = list(nodes)

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        """Collect all nodes reachable from ``root``, operands before consumers."""
        order: list[Node] = []
        if root.node is None:
            return cls(order)
        seen: set[int] = set()
        stack: list[tuple[Node, bool]] = [(root.node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for t in node.inputs:
                if t.node is not None and id(t.node) not in seen:
                    stack.append((t.node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(graph: Graph, root: Tensor) -> None:
    """Accumulate d(root)/d(tensor) into ``.grad`` of every tracked tensor.

    ``root`` must be scalar. Fan-out accumulates by summation; each node is
    visited exactly once.
    """
    if root.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    root.grad = np.ones_like(root.data)
    for node in reversed(graph.nodes):
        out = node.output()
        gout = out.grad if out is not None else None
        if gout is None:
            # Node not on any path to the root (possible when a traced tensor
            # is reused as the root of a smaller graph); nothing to propagate.
            continue
        for t, g in zip(node.inputs, node.vjp(gout)):
            if g is None or not t.requires_grad:
                continue
            if t.grad is None:
                # copy: vjp outputs may alias gout or a broadcast view
                t.grad = np.array(g, dtype=t.data.dtype, copy=True)
            else:
                t.grad += g
