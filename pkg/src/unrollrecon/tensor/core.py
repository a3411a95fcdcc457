"""Define-by-run reverse-mode autodiff over numpy arrays.

A :class:`Tensor` wraps an ``ndarray``. Operations are :class:`Function`
subclasses; applying one records a node that keeps the saved values its
backward pass needs. :func:`backward` walks the recorded graph in reverse
topological order and accumulates gradients into leaf tensors.
"""

from __future__ import annotations

import contextlib

import numpy as np

REAL_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_RECORDING = [True]


@contextlib.contextmanager
def no_grad():
    """Run operations without recording a graph (inference)."""
    prev = _RECORDING[0]
    _RECORDING[0] = False
    try:
        yield
    finally:
        _RECORDING[0] = prev


class ShapeError(ValueError):
    """Raised when operand extents do not conform."""


class DtypeError(TypeError):
    """Raised when an operation receives an unsupported dtype."""


class GraphError(RuntimeError):
    """Raised for invalid backward requests (non-scalar loss, detached graph)."""


class Tensor:
    """Dense array with an optional gradient and a link to its producer."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        if requires_grad and arr.dtype not in REAL_DTYPES:
            raise DtypeError(f"only real tensors carry gradients, got {arr.dtype}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self.node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar over the registered ops
    def __add__(self, other):
        from .ops import add, add_const

        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import add, scale

        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        from .ops import scale

        if isinstance(other, Tensor):
            return NotImplemented
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import scale

        return scale(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """Base class for a recorded operation.

    Subclasses implement ``forward(*arrays, **kw) -> ndarray`` and
    ``backward(grad_out) -> tuple`` with one entry per input (``None`` where no
    gradient is needed). State saved during forward lives on the instance.
    """

    def __init__(self, *inputs):
        self.inputs = inputs
        self.needs = tuple(t.requires_grad for t in inputs)

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        inputs = tuple(as_tensor(t) for t in inputs)
        fn = cls(*inputs)
        out = Tensor(fn.forward(*(t.data for t in inputs), **kwargs))
        if _RECORDING[0] and any(fn.needs):
            out.requires_grad = True
            out.node = fn
        return out

    @property
    def tag(self):
        return type(self).__name__


class Graph:
    """Recorded operations reachable from an output, in topological order.

    Every node's input nodes precede it in ``nodes``. ``tensors`` lists the
    tensor produced by each node, aligned with ``nodes``.
    """

    def __init__(self, output):
        if not isinstance(output, Tensor):
            raise GraphError("graph output must be a Tensor")
        order = []
        seen = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t.node.inputs:
                if parent.node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        self.output = output
        self.tensors = order
        self.nodes = [t.node for t in order]

    def __len__(self):
        return len(self.nodes)

    def leaves(self):
        out = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.node is None and t.requires_grad:
                    out[id(t)] = t
        return list(out.values())


def backward(loss, graph=None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every grad-requiring leaf.

    Calling twice without zeroing doubles the stored gradients.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is detached: no input requires a gradient")
    if loss.node is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
        return
    graph = graph or Graph(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(graph.tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t.node
        in_grads = node.backward(g)
        if not isinstance(in_grads, tuple):
            in_grads = (in_grads,)
        for inp, need, gi in zip(node.inputs, node.needs, in_grads):
            if not need or gi is None:
                continue
            if inp.node is None:
                gi = np.asarray(gi, dtype=inp.data.dtype).reshape(inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
