"""Dense tensors with reverse-mode gradient recording.

A ``Tape`` is opened as a context manager; primitive ops executed inside it
append their outputs in execution order, which is a valid topological order.
``backward`` walks the tape once in reverse, accumulating vector-Jacobian
products into a gradient map.  Tensors are thin wrappers over numpy arrays;
everything runs eagerly, the tape only remembers how to differentiate.

Ops support numpy-style broadcasting; gradients are summed back over
broadcast axes.  ``stop_gradient`` is forward-identity and contributes
exactly zero backward, which is what decouples uncertainty heads from the
encoder trunk.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "Gradients",
    "backward",
    "constant",
    "parameter",
    "set_debug_checks",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_const",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "softplus",
    "relu",
    "matmul",
    "einsum2",
    "tsum",
    "tmean",
    "logsumexp",
    "reshape",
    "transpose",
    "concat",
    "gather",
    "stop_gradient",
]

_local = threading.local()

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every op output is checked for NaN/Inf."""
    global _debug_checks
    _debug_checks = enabled


def _current_tape():
    return getattr(_local, "tape", None)


class Tape:
    """Ordered record of primitive operations; one tape per forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        if getattr(_local, "tape", None) is not None:
            raise RuntimeError("tapes do not nest")
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "requires_grad", "tape", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        self.requires_grad = requires_grad
        self.tape = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; ops live at module level.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return pow_const(self, c)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _record(out_data, parents, vjp) -> Tensor:
    tape = _current_tape()
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite value in forward step")
    needs = any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs and tape is not None, dtype=out_data.dtype)
    if out.requires_grad:
        out.tape = tape
        out._parents = tuple(p for p in parents if isinstance(p, Tensor))
        out._vjp = vjp
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------


def add(a, b):
    ad, bd = _data(a), _data(b)
    out = ad + bd

    def vjp(g):
        return (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape))

    return _record(out, (a, b), _pick(vjp, a, b))


def sub(a, b):
    ad, bd = _data(a), _data(b)
    out = ad - bd

    def vjp(g):
        return (_unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape))

    return _record(out, (a, b), _pick(vjp, a, b))


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = ad * bd

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _record(out, (a, b), _pick(vjp, a, b))


def div(a, b):
    ad, bd = _data(a), _data(b)
    out = ad / bd

    def vjp(g):
        return (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _record(out, (a, b), _pick(vjp, a, b))


def _pick(vjp_full, *parents):
    """Drop gradient slots of non-Tensor parents so vjp outputs align with
    the recorded Tensor parents."""
    keep = [isinstance(p, Tensor) for p in parents]
    if all(keep):
        return vjp_full

    def vjp(g):
        full = vjp_full(g)
        return tuple(v for v, k in zip(full, keep) if k)

    return vjp


def neg(a):
    ad = _data(a)
    return _record(-ad, (a,), lambda g: (-g,))


def pow_const(a, c: float):
    ad = _data(a)
    out = ad**c
    return _record(out, (a,), lambda g: (g * c * ad ** (c - 1),))


def exp(a):
    out = np.exp(_data(a))
    return _record(out, (a,), lambda g: (g * out,))


def log(a):
    ad = _data(a)
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a):
    out = np.sqrt(_data(a))
    return _record(out, (a,), lambda g: (g / (2.0 * out),))


def tanh(a):
    out = np.tanh(_data(a))
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a):
    ad = _data(a)
    out = np.maximum(ad, 0.0) + np.log1p(np.exp(-np.abs(ad)))
    return _record(out, (a,), lambda g: (g * _sigmoid(ad),))


def relu(a):
    ad = _data(a)
    return _record(np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0.0),))


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError("matmul supports 2-d operands only")
    out = ad @ bd

    def vjp(g):
        return (g @ bd.T, ad.T @ g)

    return _record(out, (a, b), _pick(vjp, a, b))


def einsum2(subscripts: str, a, b):
    """Two-operand einsum.  Every index must appear in at least two of
    (a, b, output), which makes the gradient another einsum with the output
    and the other operand swapped in."""
    ad, bd = _data(a), _data(b)
    in_spec, out_spec = subscripts.replace(" ", "").split("->")
    a_spec, b_spec = in_spec.split(",")
    out = np.einsum(subscripts, ad, bd)

    def vjp(g):
        ga = np.einsum(f"{out_spec},{b_spec}->{a_spec}", g, bd)
        gb = np.einsum(f"{out_spec},{a_spec}->{b_spec}", g, ad)
        return (ga, gb)

    return _record(out, (a, b), _pick(vjp, a, b))


def tsum(a, axis=None, keepdims: bool = False):
    ad = _data(a)
    out = ad.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)

    return _record(np.asarray(out), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False):
    ad = _data(a)
    count = ad.size if axis is None else ad.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def logsumexp(a, axis: int, keepdims: bool = False):
    ad = _data(a)
    m = ad.max(axis=axis, keepdims=True)
    out_k = m + np.log(np.sum(np.exp(ad - m), axis=axis, keepdims=True))
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(ad - out_k),)

    return _record(out, (a,), vjp)


def reshape(a, shape):
    ad = _data(a)
    return _record(ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def transpose(a, axes=None):
    ad = _data(a)
    out = np.transpose(ad, axes)
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return _record(out, (a,), vjp)


def concat(parts, axis: int = -1):
    datas = [_data(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [dd.shape[axis] for dd in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp_full(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), _pick(vjp_full, *parts))


def gather(a, idx: np.ndarray, axis: int = 1):
    """take_along_axis for a 2-d tensor, with scatter-add backward."""
    ad = _data(a)
    if ad.ndim != 2 or axis != 1:
        raise ValueError("gather supports 2-d tensors along axis 1")
    idx = np.asarray(idx)
    out = np.take_along_axis(ad, idx, axis=1)

    def vjp(g):
        ga = np.zeros_like(ad)
        np.add.at(ga, (np.arange(ad.shape[0])[:, None], idx), g)
        return (ga,)

    return _record(out, (a,), vjp)


def stop_gradient(a) -> Tensor:
    """Forward identity; exactly zero gradient flows to ``a``."""
    ad = _data(a)
    return _record(ad, (a,), lambda g: (None,))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


class Gradients:
    """Gradient map over tensors; absent entries are exactly zero."""

    def __init__(self, by_id: dict):
        self._by_id = by_id

    def of(self, t: Tensor) -> np.ndarray:
        g = self._by_id.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._by_id


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse pass from scalar ``loss`` over ``tape``; visits each recorded
    node exactly once and returns accumulated gradients."""
    if loss.data.ndim != 0:
        raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
    if loss.tape is not tape:
        raise ValueError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = pg.astype(parent.data.dtype, copy=False)
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return Gradients(grads)
