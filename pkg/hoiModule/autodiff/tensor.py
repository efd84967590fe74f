"""
    Dense float64 tensors with reverse-mode automatic differentiation.

    A Tensor wraps an immutable numpy array. Operations are recorded on the active Tape
    (a context manager) whenever at least one operand is tracked; Tape.backward() then walks
    the recorded nodes in reverse order and returns the gradient of a scalar root for every
    leaf registered on the tape.

    Shape rules are deliberately narrow: element-wise operations accept equal shapes, a
    scalar operand, or a 1-D operand matching the last axis of the other (row-vector bias).
    Any other combination raises ShapeError; explicit broadcast_to() covers the rest.

    Classes:
    --------
    * Tensor: value + tracking flag + operator overloads.
    * Tape: ordered record of primitive nodes, single use.

    Functions:
    ----------
    Primitives (add, mul, matmul, sum, mean, relu, gelu, softmax, sqrt, abs, maximum, gather,
    concat, layer_norm, ...), grad-mode helpers (no_grad, active_tape) and custom_op() for
    primitives defined in other modules.
"""
import itertools
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from hoiModule.utils.errors import NonFiniteError, ShapeError, TapeError

logger = logging.getLogger(__name__)

_ids    = itertools.count()
_local  = threading.local()

# sqrt(2/pi) for the tanh form of GELU
_GELU_C = np.sqrt(2.0 / np.pi)


# ======================================================================================
# Tensor
# ======================================================================================
class Tensor:
    """
    Immutable float64 array that may take part in a recorded computation.

    Attributes:
    -----------
        - data (np.ndarray): row-major values, read-only.
        - requires_grad (bool): True for watched leaves and for every value derived from one
          while a tape records.
        - id (int): unique identity used as key in gradient maps.
    """
    __slots__ = ("data", "requires_grad", "id")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False) -> None:
        if isinstance(data, Tensor):
            data = data.data
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self.data           = array
        self.requires_grad  = requires_grad
        self.id             = next(_ids)

    # ---- views
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
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # ---- operators
    def __add__(self, other):       return add(self, other)
    def __radd__(self, other):      return add(other, self)
    def __sub__(self, other):       return sub(self, other)
    def __rsub__(self, other):      return sub(other, self)
    def __mul__(self, other):       return mul(self, other)
    def __rmul__(self, other):      return mul(other, self)
    def __truediv__(self, other):   return div(self, other)
    def __rtruediv__(self, other):  return div(other, self)
    def __neg__(self):              return neg(self)
    def __matmul__(self, other):    return matmul(self, other)
    def __rmatmul__(self, other):   return matmul(other, self)
    def __getitem__(self, key):     return index(self, key)

    def __pow__(self, exponent):
        if exponent == 2:
            return mul(self, self)
        if exponent == 3:
            return mul(mul(self, self), self)
        raise ValueError("Only the exponents 2 and 3 are supported")

    # ---- reductions / reshapes as methods
    def sum(self, axis=None) -> "Tensor":
        return sum_(self, axis=axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis=axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    """Wrap python scalars and arrays, pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# ======================================================================================
# Tape and grad mode
# ======================================================================================
class _Node:
    """One recorded primitive: output id, parent tensors and the vector-Jacobian product."""
    __slots__ = ("name", "out_id", "parents", "vjp")

    def __init__(self, name: str, out_id: int, parents: tuple, vjp: Callable) -> None:
        self.name       = name
        self.out_id     = out_id
        self.parents    = parents
        self.vjp        = vjp


class Tape:
    """
    Record of primitive operations, used once for a backward pass.

    Nodes are appended at creation time, so their order is a valid topological order.
    A tape is single-owner: it registers itself on a thread-local stack while its `with`
    block is active.

    Attributes:
    -----------
        - nodes (list): recorded primitives in execution order.
        - leaves (dict): tensor id -> tracked tensor not produced by a node of this tape.

    Methods:
    --------
        - watch: register a leaf that requires gradients.
        - backward: gradient map of a scalar root (leaf id -> Tensor).
        - gradient: gradients of a root w.r.t. a list of leaves.
    """
    def __init__(self) -> None:
        self.nodes      : list  = []
        self.leaves     : dict  = {}
        self._produced  : set   = set()
        self._consumed          = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            raise TapeError("Tape exited out of order")

    def watch(self, value) -> Tensor:
        """
        Return a tracked leaf for `value` and register it on this tape.

        Tensors are re-wrapped so the caller's object keeps its own tracking flag.
        """
        data = value.data if isinstance(value, Tensor) else value
        leaf = Tensor(data, requires_grad=True)
        self.leaves[leaf.id] = leaf
        return leaf

    def record(self, name: str, out: Tensor, parents: tuple, vjp: Callable) -> None:
        if self._consumed:
            raise TapeError("Cannot record on a tape whose backward pass already ran")
        for parent in parents:
            if parent.requires_grad and parent.id not in self._produced \
                    and parent.id not in self.leaves:
                self.leaves[parent.id] = parent
        self.nodes.append(_Node(name, out.id, parents, vjp))
        self._produced.add(out.id)

    def backward(self, root: Tensor) -> dict:
        """
        Reverse pass from a scalar root.

        Returns:
            dict: leaf id -> Tensor gradient; leaves that do not influence the root get zeros.

        Raises:
            TapeError: root is not a scalar, or the tape was already consumed.
        """
        if self._consumed:
            raise TapeError("backward() already ran on this tape; record a new one")
        if not isinstance(root, Tensor) or root.ndim != 0:
            shape = root.shape if isinstance(root, Tensor) else type(root).__name__
            raise TapeError(f"backward() needs a scalar root, got {shape}")
        self._consumed = True

        grads: dict = {root.id: np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(node.out_id, None)
            if g is None:
                continue
            needs = tuple(p.requires_grad for p in node.parents)
            parent_grads = node.vjp(g, needs)
            for parent, pg, need in zip(node.parents, parent_grads, needs):
                if not need or pg is None:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        logger.debug("Backward pass over %d nodes, %d leaves", len(self.nodes), len(self.leaves))
        return {
            leaf_id: Tensor(grads[leaf_id] if leaf_id in grads else np.zeros(leaf.shape))
            for leaf_id, leaf in self.leaves.items()
        }

    def gradient(self, root: Tensor, wrt: Sequence[Tensor]) -> list:
        """Gradients of `root` w.r.t. the given leaves, as numpy arrays, in order."""
        grads = self.backward(root)
        result = []
        for leaf in wrt:
            if leaf.id not in grads:
                raise TapeError(f"{leaf!r} is not a leaf of this tape")
            result.append(grads[leaf.id].data)
        return result


def backward(tape: Tape, root: Tensor) -> dict:
    """Functional form of Tape.backward()."""
    return tape.backward(root)


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    """Tape currently recording on this thread, if any."""
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Suspend recording inside the block."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


# ======================================================================================
# Helpers
# ======================================================================================
def custom_op(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable,
              name: str = "custom") -> Tensor:
    """
    Create the output of a primitive and record it when needed.

    Args:
        data: output values.
        parents: operand tensors.
        vjp: callable (g, needs) -> tuple of parent gradients (None where not needed).
        name: primitive name used in error messages.
    """
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{name}: produced non-finite values")
    tape = active_tape()
    tracked = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=tracked)
    if tracked:
        tape.record(name, out, tuple(parents), vjp)
    return out


def _combine_check(a: Tensor, b: Tensor, name: str) -> None:
    """Allowed shape pairs: equal, scalar with anything, row-vector bias on the last axis."""
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return
    raise ShapeError(f"{name}: cannot combine shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back to the shape of a scalar / row-vector operand."""
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    return g.reshape(-1, shape[0]).sum(axis=0)


def _axis_tuple(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ======================================================================================
# Element-wise arithmetic
# ======================================================================================
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _combine_check(a, b, "add")

    def vjp(g, needs):
        return (_reduce_to(g, a.shape) if needs[0] else None,
                _reduce_to(g, b.shape) if needs[1] else None)
    return custom_op(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _combine_check(a, b, "sub")

    def vjp(g, needs):
        return (_reduce_to(g, a.shape) if needs[0] else None,
                _reduce_to(-g, b.shape) if needs[1] else None)
    return custom_op(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _combine_check(a, b, "mul")

    def vjp(g, needs):
        return (_reduce_to(g * b.data, a.shape) if needs[0] else None,
                _reduce_to(g * a.data, b.shape) if needs[1] else None)
    return custom_op(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _combine_check(a, b, "div")
    if np.any(b.data == 0.0):
        raise NonFiniteError("div: division by zero")
    out = a.data / b.data

    def vjp(g, needs):
        return (_reduce_to(g / b.data, a.shape) if needs[0] else None,
                _reduce_to(-g * out / b.data, b.shape) if needs[1] else None)
    return custom_op(out, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(-a.data, (a,), lambda g, needs: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g, needs: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NonFiniteError("log: non-positive input")
    return custom_op(np.log(a.data), (a,), lambda g, needs: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    """Square root; the gradient at 0 is taken as 0."""
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise NonFiniteError("sqrt: negative input")
    out = np.sqrt(a.data)

    def vjp(g, needs):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, g / (2.0 * safe), 0.0),)
    return custom_op(out, (a,), vjp, "sqrt")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(np.abs(a.data), (a,), lambda g, needs: (g * np.sign(a.data),), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(np.maximum(a.data, 0.0), (a,),
                     lambda g, needs: (g * (a.data > 0.0),), "relu")


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def vjp(g, needs):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * d_inner),)
    return custom_op(out, (a,), vjp, "gelu")


def maximum(a, scalar: float) -> Tensor:
    """max(a, scalar) element-wise; ties send no gradient to `a`."""
    a = as_tensor(a)
    return custom_op(np.maximum(a.data, scalar), (a,),
                     lambda g, needs: (g * (a.data > scalar),), "maximum")


def minimum(a, scalar: float) -> Tensor:
    """min(a, scalar) element-wise; ties send no gradient to `a`."""
    a = as_tensor(a)
    return custom_op(np.minimum(a.data, scalar), (a,),
                     lambda g, needs: (g * (a.data < scalar),), "minimum")


# ======================================================================================
# Reductions
# ======================================================================================
def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes)

    def vjp(g, needs):
        expanded = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(expanded, a.shape).copy(),)
    return custom_op(out, (a,), vjp, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean: empty reduction over shape {a.shape}")
    out = a.data.mean(axis=axes)

    def vjp(g, needs):
        expanded = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(expanded / count, a.shape).copy(),)
    return custom_op(out, (a,), vjp, "mean")


def _extremum(a: Tensor, axis: int, pick: Callable, name: str) -> Tensor:
    axis = axis % a.ndim
    idx = pick(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g, needs):
        grad = np.zeros(a.shape)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)
    return custom_op(out, (a,), vjp, name)


def amax(a, axis: int = -1) -> Tensor:
    """Maximum along one axis; the gradient goes to the first arg-max."""
    return _extremum(as_tensor(a), axis, np.argmax, "amax")


def amin(a, axis: int = -1) -> Tensor:
    """Minimum along one axis; the gradient goes to the first arg-min."""
    return _extremum(as_tensor(a), axis, np.argmin, "amin")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g, needs):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return custom_op(out, (a,), vjp, "softmax")


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis (no affine part)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centred = a.data - mu
    var = (centred ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = centred * inv
    n = a.shape[-1]

    def vjp(g, needs):
        g_mean = g.mean(axis=-1, keepdims=True)
        gx_mean = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - g_mean - out * gx_mean),)
    if n == 0:
        raise ShapeError("layer_norm: empty last axis")
    return custom_op(out, (a,), vjp, "layer_norm")


# ======================================================================================
# Linear algebra
# ======================================================================================
def matmul(a, b) -> Tensor:
    """2-D @ 2-D, or batched 3-D @ 3-D with the same batch size."""
    a, b = as_tensor(a), as_tensor(b)
    ok = (a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0]) or \
         (a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0] and a.shape[2] == b.shape[1])
    if not ok:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def vjp(g, needs):
        ga = g @ np.swapaxes(b.data, -1, -2) if needs[0] else None
        gb = np.swapaxes(a.data, -1, -2) @ g if needs[1] else None
        return ga, gb
    return custom_op(out, (a, b), vjp, "matmul")


def cross(a, b) -> Tensor:
    """Row-wise cross product of (..., 3) tensors of equal shape."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.shape[-1] != 3:
        raise ShapeError(f"cross: cannot combine shapes {a.shape} and {b.shape}")
    out = np.cross(a.data, b.data)

    def vjp(g, needs):
        return (np.cross(b.data, g) if needs[0] else None,
                np.cross(g, a.data) if needs[1] else None)
    return custom_op(out, (a, b), vjp, "cross")


def pairwise_sq_dist(a, b) -> Tensor:
    """Squared Euclidean distances between the rows of a (N, d) and b (M, d) -> (N, M)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_sq_dist: cannot combine shapes {a.shape} and {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = np.einsum("nmd,nmd->nm", diff, diff)

    def vjp(g, needs):
        ga = 2.0 * np.einsum("nm,nmd->nd", g, diff) if needs[0] else None
        gb = -2.0 * np.einsum("nm,nmd->md", g, diff) if needs[1] else None
        return ga, gb
    return custom_op(out, (a, b), vjp, "pairwise_sq_dist")


# ======================================================================================
# Shape manipulation
# ======================================================================================
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from err
    return custom_op(out, (a,), lambda g, needs: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    """Swap the last two axes, or permute with `axes`."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: needs at least 2 axes, got shape {a.shape}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inverse = tuple(np.argsort(axes))
    return custom_op(np.transpose(a.data, axes), (a,),
                     lambda g, needs: (np.transpose(g, inverse),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    """Explicit numpy broadcast; the gradient sums over the broadcast axes."""
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as err:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from err
    lead = len(shape) - a.ndim

    def vjp(g, needs):
        grad = g.sum(axis=tuple(range(lead))) if lead else g
        keep = tuple(i for i, n in enumerate(a.shape) if n == 1 and grad.shape[i] != 1)
        if keep:
            grad = grad.sum(axis=keep, keepdims=True)
        return (grad.reshape(a.shape),)
    return custom_op(np.array(out), (a,), vjp, "broadcast_to")


def index(a, key) -> Tensor:
    """numpy indexing (slices, integers, integer arrays)."""
    a = as_tensor(a)
    if isinstance(key, Tensor):
        raise ShapeError("index: keys must be integers, slices or integer arrays")
    out = a.data[key]

    def vjp(g, needs):
        grad = np.zeros(a.shape)
        np.add.at(grad, key, g)
        return (grad,)
    return custom_op(np.array(out), (a,), vjp, "index")


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select entries along one axis with an integer index array."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise ShapeError(f"gather: index out of range for axis {axis} of shape {a.shape}")
    out = np.take(a.data, indices, axis=axis)

    def vjp(g, needs):
        grad = np.zeros(a.shape)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (grad,)
    return custom_op(out, (a,), vjp, "gather")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    axis = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeError(f"concat: cannot combine shapes {ref} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g, needs):
        return tuple(np.split(g, bounds, axis=axis))
    return custom_op(out, tuple(tensors), vjp, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: nothing to stack")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"stack: cannot combine shapes {ref} and {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    axis = axis % out.ndim

    def vjp(g, needs):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return custom_op(out, tuple(tensors), vjp, "stack")
