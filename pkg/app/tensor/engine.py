"""Reverse-mode autodiff core: Tensor, Parameter and backward().

Every forward op builds its output through `record()`, which attaches the
parents and a closure that pushes the output gradient back to them. The graph
lives on the tensors themselves, so independent graphs can be built and
differentiated from different threads.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.config import config
from app.errors import ConfigurationError, NonFiniteError, StaleTapeError

logger = logging.getLogger(__name__)

_local = threading.local()


def resolve_dtype(precision: Optional[str] = None) -> np.dtype:
    """Map a precision name ("float64"/"float32") to a numpy dtype."""
    name = precision or config.PRECISION
    if name not in ("float64", "float32"):
        raise ConfigurationError(f"Unknown precision '{name}'")
    return np.dtype(name)


class Tensor:
    """N-D floating-point array plus the bookkeeping reverse mode needs."""

    def __init__(self, data, requires_grad: bool = False, op: str = "", dtype=None):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif array.dtype not in (np.float32, np.float64):
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[], None]] = None
        self._released = False
        self._op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ConfigurationError(
                f"Gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{op})"


class Parameter(Tensor):
    """Learnable tensor with its gradient and ADAM moment state."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, op="param", dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    @property
    def value(self) -> np.ndarray:
        return self.data

    @value.setter
    def value(self, array: np.ndarray) -> None:
        array = np.asarray(array, dtype=self.data.dtype)
        if array.shape != self.data.shape:
            raise ConfigurationError(
                f"Parameter '{self.name}' expects shape {self.data.shape}, got {array.shape}"
            )
        self.data = array

    def accumulate(self, grad: np.ndarray) -> None:
        sink = getattr(_local, "sink", None)
        if sink is not None:
            sink.add(self, grad)
            return
        if grad.shape != self.data.shape:
            raise ConfigurationError(
                f"Gradient shape {grad.shape} does not match parameter '{self.name}' {self.data.shape}"
            )
        self.grad += grad

    def astype(self, dtype) -> None:
        """Convert value and optimizer state in place to another precision."""
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.adam_m = self.adam_m.astype(dtype)
        self.adam_v = self.adam_v.astype(dtype)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


class GradientSink:
    """Per-thread gradient buffers keyed by parameter, used by data-parallel shards."""

    def __init__(self):
        self._buffers: Dict[int, Tuple[Parameter, np.ndarray]] = {}

    def add(self, param: Parameter, grad: np.ndarray) -> None:
        entry = self._buffers.get(id(param))
        if entry is None:
            self._buffers[id(param)] = (param, np.array(grad, dtype=param.data.dtype, copy=True))
        else:
            entry[1][...] += grad

    def get(self, param: Parameter) -> Optional[np.ndarray]:
        entry = self._buffers.get(id(param))
        return None if entry is None else entry[1]


@contextmanager
def gradient_sink() -> Iterator[GradientSink]:
    """Redirect parameter gradients of backward() calls in this thread into a sink."""
    sink = GradientSink()
    previous = getattr(_local, "sink", None)
    _local.sink = sink
    try:
        yield sink
    finally:
        _local.sink = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Run forward ops without recording a graph (inference)."""
    previous = getattr(_local, "no_grad", False)
    _local.no_grad = True
    try:
        yield
    finally:
        _local.no_grad = previous


def _recording() -> bool:
    return not getattr(_local, "no_grad", False)


def record(
    data: np.ndarray,
    parents: Sequence[Tensor],
    op: str,
    backward: Callable[[np.ndarray], None],
) -> Tensor:
    """Wrap an op result, attaching parents and the gradient closure when needed."""
    requires_grad = _recording() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires_grad, op=op)
    if config.DEBUG_FINITE and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"Op '{op}' produced non-finite values")
    if requires_grad:
        out._parents = tuple(parents)
        out._backward = lambda: backward(out.grad)
    return out


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, parameters: Optional[Iterable[Parameter]] = None) -> None:
    """Populate gradients of every parameter reachable from a scalar loss.

    Gradients of reachable leaves are overwritten; `parameters` not on the path
    end up with zero gradients. The graph is released afterwards, so a second
    call without a new forward pass raises StaleTapeError.
    """
    if loss._released:
        raise StaleTapeError(
            "Graph already released by a previous backward(); run the forward pass again"
        )
    if loss.data.size != 1:
        raise ConfigurationError(f"backward() needs a scalar loss, got shape {loss.shape}")

    in_sink = getattr(_local, "sink", None) is not None
    if parameters is not None and not in_sink:
        for param in parameters:
            param.zero_grad()
    if not loss.requires_grad:
        loss._released = True
        return

    order = _topological_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
        elif node.requires_grad and not (in_sink and isinstance(node, Parameter)):
            node.zero_grad()

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()

    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._released = True
