"""
Dense float64 tensors with a reverse-mode tape.

Every differentiable op is a `Function` subclass. Applying one to tensors that
require grad records a `Node`; `Tensor.backward` gathers the reachable nodes
into a `ComputeGraph` and replays them in exact reverse construction order.
"""
import itertools
import threading
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.ndgrad.errors import GraphError, NonFiniteError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_grad_state = threading.local()
_node_ids = itertools.count()


def is_grad_enabled() -> bool:
    """Whether ops on this thread record graph nodes."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread (frozen-parameter inference)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Function:
    """
    Base class for differentiable operations.

    `forward` receives the raw arrays of the inputs and may stash whatever the
    backward pass needs on `self`. `backward` receives dL/d(output) and returns
    one gradient array (or None) per input, in input order.
    """

    name = "op"

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} does not implement forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} does not implement backward")

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> "Tensor":
        """Run the forward pass and record a node when any input requires grad."""
        tensors = [as_tensor(value) for value in inputs]
        function = cls(**kwargs)
        out = np.asarray(function.forward(*(t.data for t in tensors)), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(function.name, f"output shape {out.shape}")

        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor._from_op(out, requires_grad)
        if requires_grad:
            result._node = Node(function, tensors)
        return result


class Node:
    """One recorded op: the function instance and the tensors it consumed."""

    __slots__ = ("node_id", "function", "inputs", "consumed")

    def __init__(self, function: Function, inputs: List["Tensor"]):
        self.node_id = next(_node_ids)
        self.function: Optional[Function] = function
        self.inputs = inputs
        self.consumed = False

    @property
    def op(self) -> str:
        return self.function.name if self.function is not None else "released"


class ComputeGraph:
    """The nodes reachable from one output, held in construction order."""

    def __init__(self, nodes: List[Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: "Tensor") -> "ComputeGraph":
        if output._node is None:
            return cls([])
        seen = {}
        stack = [output._node]
        while stack:
            node = stack.pop()
            if node.node_id in seen:
                continue
            if node.consumed:
                raise GraphError(
                    f"node {node.node_id} was released by an earlier backward; run a fresh forward pass"
                )
            seen[node.node_id] = node
            stack.extend(t._node for t in node.inputs if t._node is not None)
        return cls(sorted(seen.values(), key=lambda n: n.node_id))

    def backward(self, output: "Tensor", seed: np.ndarray) -> None:
        """Propagate `seed` from `output` to every leaf that requires grad."""
        pending = {output._node.node_id: seed}
        for node in reversed(self.nodes):
            grad = pending.pop(node.node_id, None)
            if grad is not None:
                input_grads = node.function.backward(grad)
                for tensor, input_grad in zip(node.inputs, input_grads):
                    if input_grad is None or not tensor.requires_grad:
                        continue
                    if input_grad.shape != tensor.shape:
                        raise ShapeError(f"{node.op} backward", [input_grad.shape, tensor.shape])
                    if not np.all(np.isfinite(input_grad)):
                        raise NonFiniteError(f"{node.op} backward")
                    if tensor._node is not None:
                        key = tensor._node.node_id
                        pending[key] = pending[key] + input_grad if key in pending else input_grad
                    elif tensor.grad is None:
                        tensor.grad = np.array(input_grad, dtype=np.float64)
                    else:
                        tensor.grad = tensor.grad + input_grad
            node.consumed = True
            node.function = None


def _ops():
    from src.ndgrad import ops
    return ops


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        if any(dim <= 0 for dim in self.data.shape):
            raise ShapeError("tensor", [self.data.shape], "dimensions must be positive")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        tensor = Tensor.__new__(Tensor)
        tensor.data = data
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor._node = None
        tensor.name = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `.grad`."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss does not require grad (detached graph)")
        if self._node is None:
            self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
            return
        if self._node.consumed:
            raise GraphError("backward already ran on this graph; run a fresh forward pass")
        graph = ComputeGraph.from_output(self)
        graph.backward(self, np.ones_like(self.data))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic
    def __add__(self, other: Any) -> "Tensor":
        return _ops().add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return _ops().add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return _ops().sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return _ops().sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return _ops().mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return _ops().mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return _ops().div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return _ops().div(other, self)

    def __neg__(self) -> "Tensor":
        return _ops().neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return _ops().power(self, exponent)

    def __matmul__(self, other: Any) -> "Tensor":
        return _ops().matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return _ops().index(self, index)

    # reductions and shape
    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return _ops().reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return _ops().reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return _ops().transpose(self, axes or None)

    # elementwise
    def exp(self) -> "Tensor":
        return _ops().exp(self)

    def log(self) -> "Tensor":
        return _ops().log(self)

    def abs(self) -> "Tensor":
        return _ops().absolute(self)

    def sigmoid(self) -> "Tensor":
        return _ops().sigmoid(self)

    def relu(self) -> "Tensor":
        return _ops().relu(self)


def as_tensor(value: Any) -> Tensor:
    """Wrap constants; tensors pass through untouched."""
    if isinstance(value, Tensor):
        return value
    return Tensor._from_op(np.asarray(value, dtype=np.float64), False)
