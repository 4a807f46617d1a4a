from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from volumae.exceptions import GraphError, NonFiniteError


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording them in a compute graph"""

    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """
    Dense float64 array taking part in reverse-mode differentiation.

    A tensor is never modified after an operation produced it, the only
    mutable field is `grad`, which `backward` accumulates into for leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(op)

        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out.requires_grad = _grad_enabled.get() and any(
            p.requires_grad for p in parents
        )
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{label})"

    # Arithmetic is delegated to `ops`, imported lazily to avoid a cycle
    def __add__(self, other):
        from volumae.numerics import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from volumae.numerics import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from volumae.numerics import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from volumae.numerics import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from volumae.numerics import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from volumae.numerics import ops

        return ops.mul(other, self)

    def __truediv__(self, other):
        from volumae.numerics import ops

        return ops.div(self, other)

    def __neg__(self):
        from volumae.numerics import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from volumae.numerics import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from volumae.numerics import ops

        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from volumae.numerics import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from volumae.numerics import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        from volumae.numerics import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        from volumae.numerics import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class ComputeGraph:
    """Operations reachable from an output, in topological order"""

    nodes: List[Tensor] = field(default_factory=list)
    leaves: List[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, output: Tensor) -> "ComputeGraph":
        graph = cls()
        # 1 = on the DFS stack, 2 = emitted
        state: Dict[int, int] = {}
        stack: List[Tuple[Tensor, int]] = [(output, 0)]

        while stack:
            node, next_parent = stack.pop()
            key = id(node)

            if next_parent == 0:
                if state.get(key) == 2:
                    continue
                state[key] = 1

            if next_parent < len(node._parents):
                stack.append((node, next_parent + 1))
                parent = node._parents[next_parent]
                parent_state = state.get(id(parent))
                if parent_state == 1:
                    raise GraphError(f"Cycle detected at operation `{parent.op}`")
                if parent_state is None:
                    stack.append((parent, 0))
                continue

            state[key] = 2
            graph.nodes.append(node)
            if node.is_leaf and node.requires_grad:
                graph.leaves.append(node)

        return graph


def backward(
    loss: Tensor, inputs: Optional[Sequence[Tensor]] = None
) -> Optional[List[np.ndarray]]:
    """
    Accumulate d(loss)/d(leaf) into the `grad` of every leaf requiring it.

    When `inputs` is given, each of them ends up with a `grad` (zeros when
    the loss doesn't depend on it) and the list of those gradients is returned.
    """

    if loss.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")

    pending: Dict[int, np.ndarray] = {}

    if loss.requires_grad:
        graph = ComputeGraph.trace(loss)
        pending[id(loss)] = np.ones_like(loss.data)

        for node in reversed(graph.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue

            if node.is_leaf:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue

            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad

    if inputs is None:
        return None

    result = []
    for tensor in inputs:
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        result.append(tensor.grad)
    return result
