"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the operations the MTL network and its losses need are provided. Every
operation that touches a tensor with ``requires_grad`` records a node; the
nodes are ordered by creation so :func:`backward` can walk them in reverse
execution order, visiting each exactly once.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "tsum",
    "mean",
    "reshape",
    "concat",
    "exp",
    "log",
    "power",
    "clamp_min",
    "clamp_max",
    "relu",
    "sigmoid",
    "log_sigmoid",
    "softmax",
    "log_softmax",
    "linear",
    "conv1d",
    "batchnorm1d",
    "global_avg_pool",
    "avg_pool1d",
    "max_pool1d",
]

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_order = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_order", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable] = None
        self._order = next(_order)
        self.name = name

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
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> int:
        return backward(self)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data: ArrayLike, name: Optional[str] = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None


def backward(loss: Tensor) -> int:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Returns the number of graph nodes visited.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return 0

    nodes = []
    seen = {id(loss)}
    stack = [loss]
    while stack:
        t = stack.pop()
        nodes.append(t)
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda t: t._order, reverse=True)

    grads = {id(loss): np.ones_like(loss.data)}
    visits = 0
    for t in nodes:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        visits += 1
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return visits


# ---------------------------------------------------------------------------
# elementwise and structural


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ValueError(f"shape mismatch for concat along axis {axis}: {ref} vs {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _node(
        np.concatenate([t.data for t in tensors], axis=ax),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=ax)),
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a: Tensor, p: float) -> Tensor:
    """``a ** p`` for a constant exponent; the gradient at 0 is taken as 0 when p < 1."""
    p = float(p)
    out = np.power(a.data, p)

    def fn(g):
        if p == 0.0:
            return (np.zeros_like(g),)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(a.data, p - 1.0)
        return (g * np.where(np.isfinite(d), d, 0.0),)

    return _node(out, (a,), fn)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = a.data > lo
    return _node(np.where(mask, a.data, lo), (a,), lambda g: (g * mask,))


def clamp_max(a: Tensor, hi: float) -> Tensor:
    mask = a.data < hi
    return _node(np.where(mask, a.data, hi), (a,), lambda g: (g * mask,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a: Tensor) -> Tensor:
    """``log(sigmoid(a))`` evaluated without overflow."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _node(out, (a,), lambda g: (g * _sigmoid(-x),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _node(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _node(out, (a,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# layers


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` with x of shape (N, in) and w of shape (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"shape mismatch: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def fn(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _node(out, parents, fn)


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Cross-correlation with "same" zero padding of (K - 1) / 2 on each side.

    x: (N, C_in, L), w: (C_out, C_in, K) with K odd; output length ceil(L / stride).
    """
    n, c_in, length = x.shape
    c_out, w_in, k = w.shape
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if w_in != c_in:
        raise ValueError(f"shape mismatch: input {x.shape} vs weight {w.shape}")
    pad = (k - 1) // 2
    l_out = -(-length // stride)

    if k == 1:
        xs = x.data[:, :, ::stride]
        wm = w.data[:, :, 0]
        out = np.matmul(wm, xs)
        if b is not None:
            out += b.data[None, :, None]

        def fn1(g):
            gx = gw = None
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                gx[:, :, ::stride] = np.matmul(wm.T, g)
            if w.requires_grad:
                gw = np.einsum("nol,ncl->oc", g, xs)[:, :, None]
            grads = (gx, gw)
            return grads if b is None else grads + (g.sum(axis=(0, 2)),)

        return _node(out, (x, w) if b is None else (x, w, b), fn1)

    out = _correlate_same(x.data, w.data, stride)
    if b is not None:
        out += b.data[None, :, None]

    def fn(g):
        gx = gw = None
        if w.requires_grad:
            win = _windows(x.data, k, stride, l_out)
            gw = np.einsum("nol,nclk->ock", g, win, optimize=True)
        if x.requires_grad:
            # transpose of a strided correlation: zero-stuff g, correlate with the flipped kernel
            if stride == 1:
                g_full = g
            else:
                g_full = np.zeros((n, c_out, length))
                g_full[:, :, ::stride] = g
            gx = _correlate_same(g_full, w.data.transpose(1, 0, 2)[:, :, ::-1], 1)
        grads = (gx, gw)
        return grads if b is None else grads + (g.sum(axis=(0, 2)),)

    return _node(out, (x, w) if b is None else (x, w, b), fn)


def _windows(x: np.ndarray, k: int, stride: int, l_out: int) -> np.ndarray:
    """(N, C, L) -> zero-padded sliding windows (N, C, L_out, K), a view of one padded copy."""
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    return sliding_window_view(xp, k, axis=2)[:, :, : stride * (l_out - 1) + 1 : stride, :]


def _correlate_same(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    k = w.shape[2]
    l_out = -(-x.shape[2] // stride)
    return np.einsum("nclk,ock->nol", _windows(x, k, stride, l_out), w, optimize=True)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalisation over (N, L) per channel of an (N, C, L) input.

    In training mode the running statistics are updated in place (unbiased
    variance, as is conventional).
    """
    if x.ndim != 3 or x.shape[1] != gamma.shape[0]:
        raise ValueError(f"shape mismatch: input {x.shape} vs {gamma.shape[0]} channels")
    axes = (0, 2)
    if training:
        mu = x.data.mean(axis=axes)
        centered = x.data - mu[None, :, None]
        var = (centered * centered).mean(axis=axes)
        count = x.shape[0] * x.shape[2]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
    else:
        mu, var = running_mean.copy(), running_var.copy()
        centered = x.data - mu[None, :, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std[None, :, None]
    out = xhat * gamma.data[None, :, None] + beta.data[None, :, None]

    def fn(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None]
            if training:
                m1 = gxhat.mean(axis=axes)
                m2 = (gxhat * xhat).mean(axis=axes)
                gx = (gxhat - m1[None, :, None] - xhat * m2[None, :, None]) * inv_std[None, :, None]
            else:
                gx = gxhat * inv_std[None, :, None]
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, L) -> (N, C)."""
    return mean(x, axis=2)


def avg_pool1d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    stride = stride or kernel
    n, c, length = x.shape
    l_out = (length - kernel) // stride + 1
    win = sliding_window_view(x.data, kernel, axis=2)[:, :, : stride * (l_out - 1) + 1 : stride]
    out = win.mean(axis=-1)

    def fn(g):
        gx = np.zeros_like(x.data)
        span = stride * (l_out - 1) + 1
        share = g / kernel
        for j in range(kernel):
            gx[:, :, j : j + span : stride] += share
        return (gx,)

    return _node(out, (x,), fn)


def max_pool1d(x: Tensor, kernel: int, stride: Optional[int] = None) -> Tensor:
    """Max pooling; ties route the gradient to the lowest index in the window."""
    stride = stride or kernel
    n, c, length = x.shape
    l_out = (length - kernel) // stride + 1
    win = sliding_window_view(x.data, kernel, axis=2)[:, :, : stride * (l_out - 1) + 1 : stride]
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def fn(g):
        gx = np.zeros_like(x.data)
        src = arg + np.arange(l_out)[None, None, :] * stride
        np.add.at(
            gx,
            (np.arange(n)[:, None, None], np.arange(c)[None, :, None], src),
            g,
        )
        return (gx,)

    return _node(out, (x,), fn)


def parameters_grad_finite(params: Iterable[Tensor]) -> bool:
    return all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params)
