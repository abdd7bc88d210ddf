"""Dense tensors with reverse-mode gradients.

Every op records its parents and a closure mapping the output gradient
to parent gradients. ``backward`` walks the graph in reverse topological
order. Only the operations the FCDN layers need are provided.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from .. import kernels

_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype():
    return _get("dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def grad_enabled() -> bool:
    return _get("grad", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class AutodiffError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

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

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self, grad=None):
        backward(self, grad)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data, dtype=np.asarray(data).dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tensor that
    requires it."""
    if grad is None:
        if loss.data.size != 1:
            raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        raise AutodiffError("loss is not connected to any parameter (backward before forward?)")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def power(a, p):
    a = as_tensor(a)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def elu(a, alpha=1.0):
    a = as_tensor(a)
    x = a.data
    neg = x < 0
    ex = np.exp(np.minimum(x, 0))
    out = np.where(neg, alpha * (ex - 1), x).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * np.where(neg, alpha * ex, 1).astype(x.dtype),))


_GELU_C = np.sqrt(2 / np.pi)


def gelu(a):
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def bw(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return _make(out.astype(x.dtype), (a,), bw)


# -- reductions / shape -----------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: (np.array(_expand(g, a.shape, axis, keepdims)),))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / max(np.asarray(out).size, 1)
    return _make(out, (a,), lambda g: (np.array(_expand(g, a.shape, axis, keepdims)) / n,))


def _extreme(a, axis, keepdims, fn):
    a = as_tensor(a)
    out = fn(a.data, axis=axis, keepdims=True)
    hit = (a.data == out)
    count = hit.sum(axis=axis, keepdims=True)
    res = out if keepdims else np.squeeze(out, axis=axis) if axis is not None else out.reshape(())

    def bw(g):
        gk = g if keepdims else _expand(g, out.shape, axis, False) if axis is not None else g.reshape(out.shape)
        return (hit * (np.asarray(gk) / count),)

    return _make(res, (a,), bw)


def tmax(a, axis=None, keepdims=False):
    """Max reduction; the gradient is shared equally among tied maxima."""
    return _extreme(a, axis, keepdims, np.max)


def tmin(a, axis=None, keepdims=False):
    return _extreme(a, axis, keepdims, np.min)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i, j):
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def getitem(a, idx):
    a = as_tensor(a)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def bw(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make(out, tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.ndim > 1 else np.outer(g, b.data)
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if a.ndim > 1 else np.outer(a.data, g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw)


# -- neural-net primitives --------------------------------------------------

def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(out, (a,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if b == 0:
        raise AutodiffError("cross-entropy of an empty batch")
    if labels.shape != (b,) or labels.min() < 0 or labels.max() >= c:
        raise AutodiffError("labels must be a length-B vector of indices < C")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    out = np.asarray((lse - z[np.arange(b), labels]).mean(), dtype=logits.dtype)
    sm = np.exp(z - lse[:, None])

    def bw(g):
        d = sm.copy()
        d[np.arange(b), labels] -= 1
        return (d * (g / b),)

    return _make(out, (logits,), bw)


def cosine_similarity(a, b, axis=-1, eps=1e-8):
    num = tsum(a * b, axis=axis)
    na = sqrt(tsum(a * a, axis=axis) + eps)
    nb = sqrt(tsum(b * b, axis=axis) + eps)
    return num / (na * nb)


def conv_time(x, w, b=None, padding="valid", stride=1):
    """Convolution with a ``1 x k`` kernel along the last axis.

    x: (B, Cin, H, W), w: (Cout, Cin, k), b: (Cout,)
    ``padding='same'`` zero-pads (k-1)//2 on the left and the rest on the
    right, preserving the time length.
    """
    x, w = as_tensor(x), as_tensor(w)
    k = w.shape[2]
    if x.shape[1] != w.shape[1]:
        raise AutodiffError(f"conv expects {w.shape[1]} input channels, got {x.shape[1]}")
    if padding == "same":
        left = (k - 1) // 2
        right = k - 1 - left
    elif padding == "valid":
        left = right = 0
    else:
        raise AutodiffError(f"unknown padding {padding!r}")
    width = x.shape[3]
    if width + left + right < k:
        raise AutodiffError(f"input length {width} shorter than kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, 0), (left, right))) if left or right else x.data
    xp = np.ascontiguousarray(xp)
    wd = np.ascontiguousarray(w.data)
    full = kernels.conv_time_forward(xp, wd)
    out = full[..., ::stride] if stride > 1 else full
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents = (x, w, b)

    def bw(g):
        if stride > 1:
            gf = np.zeros_like(full)
            gf[..., ::stride] = g
        else:
            gf = g
        gxp, gw = kernels.conv_time_backward(xp, wd, np.ascontiguousarray(gf))
        gx = gxp[..., left:left + width]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, parents, bw)


def batch_norm_train(x, gamma, beta, eps=1e-5):
    """Batch-statistics normalisation over (B, H, W) per channel.

    Returns the output tensor plus the batch mean and unbiased variance
    for the caller's running-statistics update.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0, 2, 3)
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g4 = gamma.data[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * g4
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        return gx, gg, gb

    unbiased = var.reshape(-1) * (m / max(m - 1, 1))
    return _make(out.astype(x.dtype), (x, gamma, beta), bw), mu.reshape(-1), unbiased


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    red = tuple(range(x.ndim - 1))

    def bw(g):
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(out.astype(x.dtype), (x, gamma, beta), bw)


def avg_pool_time(x, kernel, stride=None):
    """Average pooling over the last axis; trailing samples that do not
    fill a window are dropped."""
    x = as_tensor(x)
    stride = stride or kernel
    width = x.shape[-1]
    if width < kernel:
        raise AutodiffError(f"pool kernel {kernel} longer than input {width}")
    n_out = (width - kernel) // stride + 1
    if stride == kernel:
        used = n_out * kernel
        out = x.data[..., :used].reshape(*x.shape[:-1], n_out, kernel).mean(axis=-1)

        def bw(g):
            gx = np.zeros_like(x.data)
            gx[..., :used] = np.repeat(g / kernel, kernel, axis=-1)
            return (gx,)
    else:
        starts = np.arange(n_out) * stride
        out = np.stack([x.data[..., s:s + kernel].mean(axis=-1) for s in starts], axis=-1)

        def bw(g):
            gx = np.zeros_like(x.data)
            for i, s in enumerate(starts):
                gx[..., s:s + kernel] += g[..., i:i + 1] / kernel
            return (gx,)

    return _make(out, (x,), bw)


def adaptive_avg_pool_time(x, target=1):
    """Average the last axis into ``target`` bins, [floor(iW/t), ceil((i+1)W/t))."""
    x = as_tensor(x)
    width = x.shape[-1]
    if target < 1 or width < target:
        raise AutodiffError(f"cannot pool {width} samples into {target} bins")
    bounds = [(i * width // target, -((-(i + 1) * width) // target)) for i in range(target)]
    out = np.stack([x.data[..., a:b].mean(axis=-1) for a, b in bounds], axis=-1)

    def bw(g):
        gx = np.zeros_like(x.data)
        for i, (a, b) in enumerate(bounds):
            gx[..., a:b] += g[..., i:i + 1] / (b - a)
        return (gx,)

    return _make(out, (x,), bw)


def dropout_mask(x, mask):
    """Multiply by a precomputed (already rescaled) mask."""
    x = as_tensor(x)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def linear_map(x, matrix_left=None, matrix_right=None):
    """``L @ x @ R`` over the last two axes with constant matrices."""
    x = as_tensor(x)
    out = x.data
    if matrix_left is not None:
        out = np.matmul(matrix_left, out)
    if matrix_right is not None:
        out = np.matmul(out, matrix_right)

    def bw(g):
        if matrix_right is not None:
            g = np.matmul(g, matrix_right.T)
        if matrix_left is not None:
            g = np.matmul(matrix_left.T, g)
        return (g,)

    return _make(out.astype(x.dtype), (x,), bw)
