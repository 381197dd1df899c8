"""Dense float64 tensors with tape-style reverse-mode differentiation.

The graph is dynamic: every differentiable op records its inputs and a local
backward rule on the output tensor. ``Tensor.backward`` sorts the recorded
nodes topologically, propagates gradients into leaves and then frees the
interior nodes.

Broadcasting is limited to the two forms the model needs: equal shapes and
scalar (0-d) against tensor. Anything else is a ``DimensionError``.
"""

import contextlib
import threading
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from src.utils.errors import ContractError, DimensionError

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_state = threading.local()

BINARY_OPS = ('add', 'sub', 'mul', 'div')
UNARY_OPS = ('exp', 'abs', 'square', 'sqrt', 'neg', 'sigmoid', 'silu')
REDUCE_OPS = ('sum', 'mean')


def is_grad_enabled() -> bool:

    return getattr(_grad_state, 'enabled', True)


@contextlib.contextmanager
def no_grad():

    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:

    def __init__(self, data, requires_grad: bool = False):

        self.data = np.array(data, dtype=np.float64, order='C')
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = 'leaf'
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[BackwardRule] = None
        self._is_leaf = True

    @classmethod
    def _wrap(cls, array: np.ndarray) -> 'Tensor':

        tensor = cls.__new__(cls)
        tensor.data = np.asarray(array, dtype=np.float64, order='C')
        tensor.requires_grad = False
        tensor.grad = None
        tensor.op = 'const'
        tensor._parents = ()
        tensor._backward = None
        tensor._is_leaf = True
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

    @property
    def is_leaf(self) -> bool:

        return self._is_leaf

    def numpy(self) -> np.ndarray:

        return self.data.copy()

    def item(self) -> float:

        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):

        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None, retain_graph: bool = False):

        Graph.trace(self).backward(grad, retain_graph=retain_graph)

    def detach(self) -> 'Tensor':

        return stop_gradient(self)

    def __add__(self, other):
        return elementwise('add', self, other)

    def __radd__(self, other):
        return elementwise('add', other, self)

    def __sub__(self, other):
        return elementwise('sub', self, other)

    def __rsub__(self, other):
        return elementwise('sub', other, self)

    def __mul__(self, other):
        return elementwise('mul', self, other)

    def __rmul__(self, other):
        return elementwise('mul', other, self)

    def __truediv__(self, other):
        return elementwise('div', self, other)

    def __rtruediv__(self, other):
        return elementwise('div', other, self)

    def __neg__(self):
        return elementwise('neg', self)

    def exp(self) -> 'Tensor':
        return elementwise('exp', self)

    def abs(self) -> 'Tensor':
        return elementwise('abs', self)

    def square(self) -> 'Tensor':
        return elementwise('square', self)

    def sqrt(self) -> 'Tensor':
        return elementwise('sqrt', self)

    def sigmoid(self) -> 'Tensor':
        return elementwise('sigmoid', self)

    def silu(self) -> 'Tensor':
        return elementwise('silu', self)

    def sum(self, axes=None) -> 'Tensor':
        return reduce('sum', self, axes)

    def mean(self, axes=None) -> 'Tensor':
        return reduce('mean', self, axes)

    def reshape(self, *shape) -> 'Tensor':

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):

        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self.op})"


class Graph:

    def __init__(self, nodes: List[Tensor]):

        self.nodes = nodes

    @classmethod
    def trace(cls, output: Tensor) -> 'Graph':

        order: List[Tensor] = []
        visited = set()
        stack = [(output, False)]

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

        return cls(order)

    def backward(self, grad: Optional[np.ndarray] = None, retain_graph: bool = False):

        root = self.nodes[-1]

        if grad is None:
            if root.data.size != 1:
                raise ContractError(
                    f"backward() without a seed gradient needs a scalar output, got shape {root.shape}"
                )
            grad = np.ones_like(root.data)

        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != root.shape:
            raise DimensionError(f"seed gradient shape {grad.shape} does not match output {root.shape}")

        pending = {id(root): grad}

        for node in reversed(self.nodes):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue

            if node._backward is None:
                if node._is_leaf and node.requires_grad:
                    node.grad = node_grad.copy() if node.grad is None else node.grad + node_grad
                continue

            parent_grads = node._backward(node_grad)

            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue

                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad

        if not retain_graph:
            self.release()

    def release(self):

        for node in self.nodes:
            if not node._is_leaf:
                node._parents = ()
                node._backward = None


def as_tensor(value: Union[Tensor, float, int, np.ndarray]) -> Tensor:

    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: BackwardRule,
    op: str
) -> Tensor:

    out = Tensor._wrap(data)
    out.op = op

    if is_grad_enabled() and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._is_leaf = False

    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str):

    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:

    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return np.broadcast_to(grad, shape).copy()


def elementwise(tag: str, a, b=None) -> Tensor:

    if tag in BINARY_OPS:
        if b is None:
            raise ContractError(f"elementwise '{tag}' needs two operands")
        return _binary(tag, as_tensor(a), as_tensor(b))

    if tag in UNARY_OPS:
        if b is not None:
            raise ContractError(f"elementwise '{tag}' takes a single operand")
        return _unary(tag, as_tensor(a))

    raise ContractError(f"unsupported elementwise op '{tag}'")


def _binary(tag: str, a: Tensor, b: Tensor) -> Tensor:

    _check_broadcast(a, b, tag)
    x, y = a.data, b.data

    if tag == 'add':
        data = x + y

        def rule(g):
            return g, g
    elif tag == 'sub':
        data = x - y

        def rule(g):
            return g, -g
    elif tag == 'mul':
        data = x * y

        def rule(g):
            return g * y, g * x
    else:
        data = x / y

        def rule(g):
            return g / y, -g * x / (y * y)

    def backward(g):
        ga, gb = rule(g)
        return _unbroadcast(np.broadcast_to(ga, data.shape), a.shape), \
            _unbroadcast(np.broadcast_to(gb, data.shape), b.shape)

    return make_result(data, (a, b), backward, tag)


def _unary(tag: str, a: Tensor) -> Tensor:

    x = a.data

    if tag == 'exp':
        data = np.exp(x)

        def backward(g):
            return (g * data,)
    elif tag == 'abs':
        data = np.abs(x)

        def backward(g):
            return (g * np.sign(x),)
    elif tag == 'square':
        data = x * x

        def backward(g):
            return (2.0 * g * x,)
    elif tag == 'sqrt':
        data = np.sqrt(x)

        def backward(g):
            return (0.5 * g / data,)
    elif tag == 'neg':
        data = -x

        def backward(g):
            return (-g,)
    elif tag == 'sigmoid':
        data = expit(x)

        def backward(g):
            return (g * data * (1.0 - data),)
    else:
        gate = expit(x)
        data = x * gate

        def backward(g):
            return (g * (gate + x * gate * (1.0 - gate)),)

    return make_result(data, (a,), backward, tag)


def _normalize_axes(axes, ndim: int) -> Tuple[int, ...]:

    if axes is None:
        return tuple(range(ndim))

    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)

    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise DimensionError(f"axis {axis} is out of range for a {ndim}-d tensor")
        normalized.append(axis % ndim)

    if len(set(normalized)) != len(normalized):
        raise DimensionError(f"repeated axis in {tuple(axes)}")

    return tuple(sorted(normalized))


def reduce(tag: str, a, axes=None) -> Tensor:

    a = as_tensor(a)

    if tag not in REDUCE_OPS:
        raise ContractError(f"unsupported reduction '{tag}'")

    axes = _normalize_axes(axes, a.ndim)
    count = int(np.prod([a.shape[axis] for axis in axes])) if axes else 1

    if tag == 'sum':
        data = a.data.sum(axis=axes)
        scale = 1.0
    else:
        data = a.data.sum(axis=axes) / count
        scale = 1.0 / count

    def backward(g):
        expanded = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(expanded * scale, a.shape).copy(),)

    return make_result(np.asarray(data), (a,), backward, tag)


def reshape(a, shape: Iterable[int]) -> Tensor:

    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)

    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}: {e}")

    def backward(g):
        return (g.reshape(a.shape),)

    return make_result(data, (a,), backward, 'reshape')


def stop_gradient(a) -> Tensor:
    # Same values, no parents: a constant to everything downstream.

    a = as_tensor(a)
    out = Tensor._wrap(a.data.copy())
    out.op = 'stop_gradient'
    return out


def parameter(data) -> Tensor:

    return Tensor(data, requires_grad=True)
