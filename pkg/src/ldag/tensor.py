"""Dense tensors with reverse-mode gradient recording.

Design: define-by-run. A thread-local ``Graph`` records every primitive
whose inputs require gradients; ``Graph.backward`` walks the tape once in
reverse. Storage is float32 by default, reductions and matmuls accumulate
in float64, and ``precision("float64")`` switches the whole module to a
64-bit verification mode for tight finite-difference checks.

No implicit broadcasting: elementwise ops demand identical shapes, and the
only shape-changing broadcast is the explicit ``broadcast_spatial``.
"""

import threading
from contextlib import contextmanager

import numpy as np

from . import backend
from .errors import ContractError, DegenerateInputError, DimensionError

_state = threading.local()


def _stack() -> list:
    if not hasattr(_state, "graphs"):
        _state.graphs = []
    return _state.graphs


def active_dtype():
    return getattr(_state, "dtype", np.float32)


@contextmanager
def precision(name: str):
    """Temporarily switch tensor storage ("float32" or "float64")."""
    if name not in ("float32", "float64"):
        raise ContractError(f"unknown precision {name!r}")
    prev = active_dtype()
    _state.dtype = np.dtype(name).type
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """A shaped buffer of floats, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=active_dtype())
        if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # sugar over the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class _Node:
    __slots__ = ("out", "inputs", "grad_fn")

    def __init__(self, out, inputs, grad_fn):
        self.out = out
        self.inputs = inputs
        self.grad_fn = grad_fn


class Gradients:
    """Read-only view of the gradients one backward pass produced."""

    def __init__(self, grads: dict, known: dict):
        self._grads = grads  # id(tensor) -> ndarray
        self._known = known  # id(tensor) -> tensor (keeps ids alive/valid)

    def of(self, t: Tensor) -> np.ndarray:
        """d loss / d t; zeros if t never influenced the loss."""
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g


class Graph:
    """Tape of recorded primitives; context manager activates recording."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self, "graphs must nest"
        return False

    def backward(self, loss: Tensor, write_grad: bool = True) -> Gradients:
        """Reverse sweep from a scalar loss; visits each node exactly once.

        With ``write_grad`` the result is also accumulated into ``.grad`` of
        every requires_grad tensor recorded as a node input.
        """
        if loss.data.shape != ():
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        known: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.grad_fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.data.shape:
                    raise ContractError(
                        f"gradient shape {gi.shape} != tensor shape {t.data.shape}")
                known[id(t)] = t
                acc = grads.get(id(t))
                grads[id(t)] = gi if acc is None else acc + gi
        result = Gradients(grads, known)
        if write_grad:
            seen = set()
            for node in self.nodes:
                for t in node.inputs:
                    if t.requires_grad and id(t) not in seen:
                        seen.add(id(t))
                        g = result.of(t)
                        t.grad = g if t.grad is None else t.grad + g
        return result


def _active_graph():
    s = _stack()
    return s[-1] if s else None


def _data(t: Tensor) -> np.ndarray:
    """Tensor payload cast to the active dtype (exact when widening)."""
    a = t.data
    if a.dtype != active_dtype():
        a = a.astype(active_dtype())
    return a


def _emit(out_data, inputs, grad_fn) -> Tensor:
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req)
    g = _active_graph()
    if g is not None and req:
        g.nodes.append(_Node(out, tuple(inputs), grad_fn))
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(_data(a) + _data(b), (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(_data(a) - _data(b), (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    da, db = _data(a), _data(b)
    return _emit(da * db, (a, b), lambda g: (g * db, g * da))


def neg(a: Tensor) -> Tensor:
    return _emit(-_data(a), (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(_data(a) * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    da = _data(a)
    mask = da > 0
    return _emit(np.where(mask, da, 0.0).astype(da.dtype), (a,), lambda g: (g * mask,))


def _expit(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _expit(_data(a))
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(_data(a))
    return _emit(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    """Natural log; domain x > 0."""
    da = _data(a)
    return _emit(np.log(da), (a,), lambda g: (g / da,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), overflow-safe; gradient is sigmoid(x)."""
    da = _data(a)
    y = np.logaddexp(0.0, da.astype(np.float64)).astype(da.dtype)
    return _emit(y, (a,), lambda g: (g * _expit(da),))


# ---------------------------------------------------------------------------
# reductions and shape ops

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None) -> Tensor:
    da = _data(a)
    axes = _norm_axis(axis, da.ndim)
    out = np.sum(da, axis=axes, dtype=np.float64).astype(da.dtype)

    def grad_fn(g):
        shape = [1 if i in axes else s for i, s in enumerate(da.shape)]
        return (np.broadcast_to(g.reshape(shape), da.shape).astype(da.dtype, copy=True),)

    return _emit(out, (a,), grad_fn)


def tmean(a: Tensor, axis=None) -> Tensor:
    da = _data(a)
    axes = _norm_axis(axis, da.ndim)
    count = 1
    for ax in axes:
        count *= da.shape[ax]
    out = (np.sum(da, axis=axes, dtype=np.float64) / count).astype(da.dtype)

    def grad_fn(g):
        shape = [1 if i in axes else s for i, s in enumerate(da.shape)]
        return (np.broadcast_to((g / count).reshape(shape), da.shape).astype(da.dtype, copy=True),)

    return _emit(out, (a,), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    da = _data(a)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != da.size:
        raise DimensionError(f"reshape: cannot view {da.shape} as {shape}")
    return _emit(da.reshape(shape), (a,), lambda g: (g.reshape(da.shape),))


def concat(tensors, axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat of an empty list")
    datas = [_data(t) for t in tensors]
    base = datas[0].shape
    for d in datas[1:]:
        if d.ndim != datas[0].ndim or any(
            i != axis and d.shape[i] != base[i] for i in range(d.ndim)
        ):
            raise DimensionError(f"concat: incompatible shapes {[d.shape for d in datas]}")
    out = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _emit(out, tuple(tensors), grad_fn)


def stack_scalars(tensors) -> Tensor:
    """Pack K scalar tensors into a length-K vector."""
    if not tensors:
        raise ContractError("stack of an empty list")
    for t in tensors:
        if t.data.shape != ():
            raise ContractError("stack_scalars expects scalar tensors")
    out = np.array([_data(t) for t in tensors], dtype=active_dtype())

    def grad_fn(g):
        return tuple(np.asarray(g[i], dtype=out.dtype).reshape(()) for i in range(len(tensors)))

    return _emit(out, tuple(tensors), grad_fn)


def broadcast_spatial(v: Tensor, h: int, w: int) -> Tensor:
    """Spread a length-C vector to a C x h x w grid."""
    dv = _data(v)
    if dv.ndim != 1:
        raise DimensionError(f"broadcast_spatial expects a vector, got {dv.shape}")
    out = np.ascontiguousarray(np.broadcast_to(dv[:, None, None], (dv.shape[0], h, w)))

    def grad_fn(g):
        return (np.sum(g, axis=(1, 2), dtype=np.float64).astype(dv.dtype),)

    return _emit(out, (v,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra and structured ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    da, db = _data(a), _data(b)
    if da.ndim != 2 or db.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {da.shape} and {db.shape}")
    if da.shape[1] != db.shape[0]:
        raise DimensionError(f"matmul: inner extents {da.shape} x {db.shape} do not match")
    out = backend.matmul(da, db)

    def grad_fn(g):
        ga = backend.matmul(np.ascontiguousarray(g), np.ascontiguousarray(db.T))
        gb = backend.matmul(np.ascontiguousarray(da.T), np.ascontiguousarray(g))
        return (ga, gb)

    return _emit(out, (a, b), grad_fn)


def bilinear_resize(a: Tensor, out_hw) -> Tensor:
    """Resize C x H x W grids with half-pixel-aligned bilinear sampling."""
    da = _data(a)
    if da.ndim != 3:
        raise DimensionError(f"bilinear_resize expects C x H x W, got {da.shape}")
    oh, ow = int(out_hw[0]), int(out_hw[1])
    out = backend.bilinear_fwd(da, oh, ow)

    def grad_fn(g):
        return (backend.bilinear_bwd(np.ascontiguousarray(g), da.shape[1], da.shape[2]),)

    return _emit(out, (a,), grad_fn)


def softmax(a: Tensor) -> Tensor:
    """Softmax over a 1-D score vector, max-subtracted for stability."""
    da = _data(a)
    if da.ndim != 1 or da.shape[0] < 1:
        raise DimensionError(f"softmax expects a nonempty vector, got {da.shape}")
    z = da.astype(np.float64)
    e = np.exp(z - z.max())
    y64 = e / e.sum()
    y = y64.astype(da.dtype)

    def grad_fn(g):
        dot = float(np.sum(g.astype(np.float64) * y64))
        return (((g - dot) * y64).astype(da.dtype),)

    return _emit(y, (a,), grad_fn)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors; errors on zero-norm input."""
    du, dv = _data(u), _data(v)
    if du.ndim != 1 or dv.ndim != 1 or du.shape != dv.shape:
        raise DimensionError(f"cosine expects equal-length vectors, got {du.shape}, {dv.shape}")
    u64 = du.astype(np.float64)
    v64 = dv.astype(np.float64)
    nu = float(np.sqrt(np.dot(u64, u64)))
    nv = float(np.sqrt(np.dot(v64, v64)))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector")
    c = float(np.dot(u64, v64)) / (nu * nv)
    out = np.asarray(c, dtype=du.dtype)

    def grad_fn(g):
        gs = float(g)
        gu = gs * (v64 / (nu * nv) - c * u64 / (nu * nu))
        gv = gs * (u64 / (nu * nv) - c * v64 / (nv * nv))
        return (gu.astype(du.dtype), gv.astype(dv.dtype))

    return _emit(out, (u, v), grad_fn)


def channel_mix(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 channel-mixing linear over a C x H x W grid (composite op)."""
    c, h, w = x.data.shape
    if weight.data.ndim != 2 or weight.data.shape[1] != c:
        raise DimensionError(
            f"channel_mix: weight {weight.data.shape} incompatible with {x.data.shape}")
    y = matmul(weight, reshape(x, (c, h * w)))
    y = reshape(y, (weight.data.shape[0], h, w))
    if bias is not None:
        y = add(y, broadcast_spatial(bias, h, w))
    return y
