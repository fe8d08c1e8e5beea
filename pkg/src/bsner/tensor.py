"""Dense tensors and the tape that records operations on them.

A :class:`Graph` is activated with ``with Graph() as g:``; every op from
:mod:`bsner.ops` whose inputs require gradients appends a :class:`Node` to
the active graph. Outside any graph ops evaluate eagerly and record nothing,
which is how evaluation-mode forwards run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float32

_ACTIVE: list["Graph"] = []


class Tensor:
    """An n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        # explicit float64 arrays are kept (the gradient checker needs them)
        if not isinstance(data, (np.ndarray, np.generic)) or arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
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
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


class IndexedGrad:
    """Gradient that touches only ``key`` of an input; accumulated in place."""

    __slots__ = ("key", "value")

    def __init__(self, key, value: np.ndarray):
        self.key = key
        self.value = value


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    output: Tensor
    backward: Optional[Callable[[np.ndarray], Sequence]] = None


@dataclass
class Graph:
    """Operation records in insertion (= topological) order."""

    nodes: list[Node] = field(default_factory=list)
    _index: dict[int, int] = field(default_factory=dict, repr=False)

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def node_id(self, t: Tensor) -> int:
        key = id(t)
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(Node("leaf", (), t))
            self._index[key] = idx
        return idx

    def record(self, kind: str, inputs: Sequence[Tensor], out: Tensor, backward) -> None:
        ids = tuple(self.node_id(t) for t in inputs)
        self._index[id(out)] = len(self.nodes)
        self.nodes.append(Node(kind, ids, out, backward))

    def backward(self, root: Tensor) -> None:
        backward(self, root)


def active_graph() -> Optional[Graph]:
    return _ACTIVE[-1] if _ACTIVE else None


def _accumulate(grads: dict, idx: int, g, like: np.ndarray) -> None:
    if isinstance(g, IndexedGrad):
        buf = grads.get(idx)
        if buf is None:
            buf = np.zeros(like.shape, dtype=like.dtype)
            grads[idx] = buf
        if isinstance(g.key, np.ndarray):
            np.add.at(buf, g.key, g.value)
        else:
            buf[g.key] += g.value
        return
    cur = grads.get(idx)
    if cur is None:
        # copy: backward closures may hand back views of upstream buffers
        grads[idx] = np.array(g, dtype=like.dtype, copy=True)
    else:
        cur += g


def backward(graph: Graph, root: Tensor) -> None:
    """Reverse-mode sweep from scalar ``root``; leaf grads accumulate with ``+=``."""
    if root.size != 1:
        raise ValueError(f"backward root must be a scalar, got shape {root.shape}")
    root_id = graph._index.get(id(root))
    if root_id is None:
        raise ValueError("backward root was not produced by this graph")
    grads: dict[int, np.ndarray] = {root_id: np.ones(root.shape, dtype=root.dtype)}
    for idx in range(root_id, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = graph.nodes[idx]
        if node.backward is None:
            t = node.output
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        in_grads = node.backward(g)
        for in_id, ig in zip(node.inputs, in_grads):
            if ig is None:
                continue
            src = graph.nodes[in_id].output
            if not src.requires_grad:
                continue
            _accumulate(grads, in_id, ig, src.data)
