"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the operators needed by the encoder, the GAI module, the channel and the
task decoders are provided. Every op accepts an optional leading batch axis.
"""

from __future__ import annotations

import contextlib
import contextvars
from collections import Counter
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

_GRAD_ENABLED = contextvars.ContextVar("grad_enabled", default=True)
_FLOP_COUNTER = contextvars.ContextVar("flop_counter", default=None)
_GRAD_FAULT = contextvars.ContextVar("grad_fault", default=None)


@contextlib.contextmanager
def backward_fault(perturb: Callable[[np.ndarray], np.ndarray]) -> Iterator[None]:
    """Test hook: every leaf gradient passes through ``perturb`` inside this block."""
    token = _GRAD_FAULT.set(perturb)
    try:
        yield
    finally:
        _GRAD_FAULT.reset(token)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class FlopCounter:
    """Collects multiply counts emitted by ops, keyed by the active stage label.

    Use as a context manager; ops executed inside it report their multiplies to
    whichever label :func:`flop_stage` set most recently (``"other"`` if none).
    """

    def __init__(self) -> None:
        self.counts: Counter = Counter()
        self.stage: Optional[str] = None
        self._token = None

    def __enter__(self) -> "FlopCounter":
        self._token = _FLOP_COUNTER.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _FLOP_COUNTER.reset(self._token)

    def total(self) -> int:
        return int(sum(self.counts.values()))


@contextlib.contextmanager
def flop_stage(name: str) -> Iterator[None]:
    counter = _FLOP_COUNTER.get()
    if counter is None:
        yield
        return
    prev, counter.stage = counter.stage, name
    try:
        yield
    finally:
        counter.stage = prev


def _count(n: int) -> None:
    counter = _FLOP_COUNTER.get()
    if counter is not None:
        counter.counts[counter.stage or "other"] += int(n)


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._consumed = False
        self.op = "leaf"

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out._consumed = False
        out.op = "const"
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple, grad_fn: Callable, op: str) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor._wrap(data)
    out.op = op
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        for p in parents:
            if p._consumed:
                raise RuntimeError(f"{op}: input graph was already consumed by backward()")
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    The recorded graph is released afterwards; a second call on the same loss
    raises ``RuntimeError``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward() called twice on the same graph; re-run the forward pass")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node._consumed:
                raise RuntimeError("graph contains a tensor whose graph was already consumed")
            fault = _GRAD_FAULT.get()
            if fault is not None:
                g = fault(g)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = None
            node._consumed = True


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    _count(out.size)
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a Python scalar; not reported to the FLOP counter."""
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
        "div",
    )


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
        "pow",
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tabs(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` for a scalar floor; ties take the ``a`` branch."""
    keep = a.data >= floor
    return _make(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,), "maximum")


def relu(a: Tensor) -> Tensor:
    keep = a.data >= 0
    return _make(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.data >= 0
    scale = np.where(pos, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def activation(a: Tensor, kind: str = "relu", slope: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- reductions and shape


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    total = tsum(a, axis, keepdims)
    count = a.size // max(total.size, 1) if axis is not None else a.size
    return scale(total, 1.0 / count) if count else total


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose"
    )


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _make(
        np.broadcast_to(a.data, shape).copy(),
        (a,),
        lambda g: (_unbroadcast(g, old),),
        "broadcast_to",
    )


def getitem(a: Tensor, index) -> Tensor:
    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), grad_fn, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    n = len(tensors)
    return _make(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics for ``a.ndim >= 2`` and ``b`` a vector or (batched) matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2:
        raise ValueError("matmul expects the left operand to have at least 2 dims")
    if a.shape[-1] != b.shape[-2 if b.ndim >= 2 else 0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    _count(out.size * a.shape[-1])
    if b.ndim == 1:

        def grad_fn(g):
            ga = g[..., None] * b.data
            gb = (g[..., None] * a.data).reshape(-1, b.shape[0]).sum(axis=0)
            return ga, gb

    else:

        def grad_fn(g):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            return ga, gb

    return _make(out, (a, b), grad_fn, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map on the last axis: ``x @ weight.T + bias``."""
    x = as_tensor(x)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    _count(out.size * weight.shape[1])
    if bias is not None:
        out = out + bias.data

    def grad_fn(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        gb = g2.sum(axis=0)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, grad_fn, "linear")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return _make(
        out,
        (a,),
        lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),),
        "softmax",
    )


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(
        out,
        (a,),
        lambda g: (g - sm * g.sum(axis=axis, keepdims=True),),
        "log_softmax",
    )


# ---------------------------------------------------------------- spatial ops


def _as_batched(x: Tensor) -> tuple:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected C×H×W or B×C×H×W input, got shape {x.shape}")
    return x, False


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding."""
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv2d: stride and dilation must be >= 1, padding >= 0")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"conv2d: weight must be C_out×C_in×k×k, got {weight.shape}")
    xb, squeeze = _as_batched(as_tensor(x))
    c_out, c_in, k, _ = weight.shape
    batch, channels, h, w = xb.shape
    if channels != c_in:
        raise ValueError(f"conv2d: input has {channels} channels, weight expects {c_in}")
    ho = conv_output_size(h, k, stride, padding, dilation)
    wo = conv_output_size(w, k, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: non-positive output extent {ho}×{wo}")
    xp = np.pad(xb.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_span = stride * (ho - 1) + 1
    w_span = stride * (wo - 1) + 1
    # cols: B × C_in × k × k × Ho × Wo
    cols = np.empty((batch, c_in, k, k, ho, wo))
    for ki in range(k):
        for kj in range(k):
            r0, c0 = ki * dilation, kj * dilation
            cols[:, :, ki, kj] = xp[:, :, r0 : r0 + h_span : stride, c0 : c0 + w_span : stride]
    out = np.tensordot(cols, weight.data, axes=([1, 2, 3], [1, 2, 3]))  # B×Ho×Wo×C_out
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    _count(out.size * c_in * k * k)
    if bias is not None:
        if bias.shape != (c_out,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
        out = out + bias.data[None, :, None, None]

    def grad_fn(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        gcols = np.tensordot(g, weight.data, axes=([1], [0]))  # B×Ho×Wo×C_in×k×k
        gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                r0, c0 = ki * dilation, kj * dilation
                gxp[:, :, r0 : r0 + h_span : stride, c0 : c0 + w_span : stride] += gcols[
                    :, :, :, :, ki, kj
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + h, padding : padding + w]
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    result = _make(out, parents, grad_fn, "conv2d")
    return reshape(result, result.shape[1:]) if squeeze else result


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: ``(..., C, H, W) -> (..., C)``."""
    if x.ndim < 3:
        raise ValueError(f"global_avg_pool expects (..., C, H, W), got {x.shape}")
    h, w = x.shape[-2:]
    if h < 1 or w < 1:
        raise ValueError("global_avg_pool: empty spatial plane")
    return scale(tsum(x, axis=(-2, -1)), 1.0 / (h * w))


def _interp_plan(n_in: int, n_out: int) -> tuple:
    # half-pixel centres, clamped to the valid source range
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1)
    lo = np.floor(s).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, s - lo


def _lerp_axis(x: np.ndarray, plan: tuple, axis: int) -> np.ndarray:
    lo, hi, frac = plan
    shape = [1] * x.ndim
    shape[axis] = -1
    xl = np.take(x, lo, axis=axis)
    return xl + frac.reshape(shape) * (np.take(x, hi, axis=axis) - xl)


def _lerp_axis_adjoint(g: np.ndarray, plan: tuple, axis: int, n_in: int) -> np.ndarray:
    lo, hi, frac = plan
    shape = [1] * g.ndim
    shape[axis] = -1
    frac = frac.reshape(shape)
    out_shape = list(g.shape)
    out_shape[axis] = n_in
    out = np.zeros(out_shape)
    moved = np.moveaxis(out, axis, 0)
    np.add.at(moved, lo, np.moveaxis(g * (1.0 - frac), axis, 0))
    np.add.at(moved, hi, np.moveaxis(g * frac, axis, 0))
    return out


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling of the two trailing axes with half-pixel centres.

    Each axis is blended as ``lo + frac * (hi - lo)``, which keeps constants
    and same-size resizes exact.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resize: target size must be positive")
    if x.ndim < 2:
        raise ValueError("bilinear_resize expects at least 2 dims")
    h, w = x.shape[-2:]
    ph, pw = _interp_plan(h, out_h), _interp_plan(w, out_w)
    ax_h, ax_w = x.ndim - 2, x.ndim - 1
    out = _lerp_axis(_lerp_axis(x.data, ph, ax_h), pw, ax_w)
    # six multiplications and three additions per output value, two blend passes
    _count(9 * out.size)

    def grad_fn(g):
        g1 = _lerp_axis_adjoint(g, pw, ax_w, w)
        return (_lerp_axis_adjoint(g1, ph, ax_h, h),)

    return _make(out, (x,), grad_fn, "bilinear_resize")


# ---------------------------------------------------------------- gradient checking


def grad_check(
    f: Callable[[Tensor], Tensor],
    point,
    eps: float = 1e-5,
    coords: Optional[Iterable[int]] = None,
) -> float:
    """Max over coordinates of ``|analytic - central| / max(1, |analytic|, |central|)``.

    ``coords`` restricts the finite-difference sweep to a subset of flat indices.
    """
    base = np.array(point, dtype=np.float64)
    x = Tensor(base, requires_grad=True)
    loss = f(x)
    if loss.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    loss.backward()
    analytic = np.zeros_like(base) if x.grad is None else x.grad
    flat = base.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(Tensor(base)).item()
            flat[i] = orig - eps
            fm = f(Tensor(base)).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("grad_check: non-finite function value")
            numeric = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
