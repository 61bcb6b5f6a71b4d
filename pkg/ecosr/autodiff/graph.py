"""Graph nodes and reverse-mode traversal.

A ``Tensor`` is a dense row-major ``numpy.ndarray`` (float32 unless the caller hands
in another float dtype, which is then preserved through every op). A ``TensorNode``
wraps one together with its gradient and the op that produced it.
"""
from typing import Optional, Sequence

import numpy as np

from ..errors import GraphConsumedError, NonScalarRootError

Tensor = np.ndarray


def as_tensor(value, dtype=None) -> Tensor:
    arr = np.asarray(value)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Function:
    """One differentiable op; instances keep whatever context backward needs."""

    def __init__(self, *parents: "TensorNode"):
        self.parents = parents

    @classmethod
    def apply(cls, *parents: "TensorNode", **kwargs) -> "TensorNode":
        fn = cls(*parents)
        value = fn.forward(*[p.value for p in parents], **kwargs)
        return TensorNode(value, parents=parents, op=fn)

    def forward(self, *args, **kwargs) -> Tensor:
        raise NotImplementedError

    def backward(self, grad: Tensor) -> Sequence[Optional[Tensor]]:
        raise NotImplementedError

    @property
    def tag(self):
        return type(self).__name__.lower()


class TensorNode:
    def __init__(self, value, parents: Sequence["TensorNode"] = (), op: Optional[Function] = None,
                 requires_grad: bool = False):
        self.value = as_tensor(value)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._consumed = False

    @classmethod
    def param(cls, value) -> "TensorNode":
        return cls(value, requires_grad=True)

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        backward(self)

    def reset(self):
        """Zero every reachable gradient so the graph may be differentiated again."""
        for node in toposort(self):
            node.grad = np.zeros_like(node.value)
            node._consumed = False

    def __repr__(self):
        op = self.op.tag if self.op else "leaf"
        return f"<TensorNode {op} {self.shape} {self.value.dtype}>"


def toposort(root: TensorNode):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: TensorNode):
    if loss.value.size != 1:
        raise NonScalarRootError(loss.shape)
    if loss._consumed:
        raise GraphConsumedError()
    order = toposort(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.op is None or not node.requires_grad:
            continue
        grads = node.op.backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            # fan-out accumulates
            parent.grad += g
    loss._consumed = True
