"""Layers built on :mod:`fcdn.autodiff.tensor`."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Parameter container. Parameters, buffers and sub-modules are found
    by walking instance attributes in assignment order."""

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix="") -> "OrderedDict[str, Parameter]":
        out = OrderedDict()
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                out[prefix + key] = val
        for key, child in self._children():
            out.update(child.named_parameters(f"{prefix}{key}."))
        return out

    def named_buffers(self, prefix="") -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for key, val in getattr(self, "_buffers", {}).items():
            out[prefix + key] = val
        for key, child in self._children():
            out.update(child.named_buffers(f"{prefix}{key}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def named_modules(self, prefix=""):
        yield prefix, self
        for key, child in self._children():
            yield from child.named_modules(f"{prefix}{key}.")

    def load_buffers(self, buffers) -> None:
        for prefix, mod in self.named_modules():
            for key, val in getattr(mod, "_buffers", {}).items():
                name = prefix + key
                if name in buffers:
                    mod._buffers[key] = np.asarray(buffers[name], dtype=val.dtype).reshape(val.shape)

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for mod in self.modules():
            for key, val in getattr(mod, "_buffers", {}).items():
                mod._buffers[key] = val.astype(dtype)
        return self

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape).astype(T.default_dtype())


class Conv2d(Module):
    """2-D convolution restricted to ``1 x k`` kernels (time axis only)."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding="valid", bias=True, rng=None):
        super().__init__()
        kh, kw = kernel if isinstance(kernel, (tuple, list)) else (1, kernel)
        sh, sw = stride if isinstance(stride, (tuple, list)) else (1, stride)
        if kh != 1 or sh != 1:
            raise ValueError("only 1 x k kernels with unit height stride are supported")
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_channels * kw)
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, kw), bound))
        self.bias = Parameter(_uniform(rng, (out_channels,), bound)) if bias else None
        self.kernel = kw
        self.stride = sw
        self.padding = padding

    def out_length(self, n):
        if self.padding == "same":
            return (n - 1) // self.stride + 1
        return (n - self.kernel) // self.stride + 1

    def forward(self, x):
        return T.conv_time(x, self.weight, self.bias, self.padding, self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        dt = T.default_dtype()
        self.gamma = Parameter(np.ones(channels, dtype=dt))
        self.beta = Parameter(np.zeros(channels, dtype=dt))
        self.eps = eps
        self.momentum = momentum
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dt),
            "running_var": np.ones(channels, dtype=dt),
        }

    def forward(self, x):
        if self.training:
            out, mu, var = T.batch_norm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            rb = self._buffers
            rb["running_mean"] = ((1 - m) * rb["running_mean"] + m * mu).astype(rb["running_mean"].dtype)
            rb["running_var"] = ((1 - m) * rb["running_var"] + m * var).astype(rb["running_var"].dtype)
            return out
        rm = self._buffers["running_mean"][None, :, None, None]
        rv = self._buffers["running_var"][None, :, None, None]
        scale = self.gamma.reshape(1, -1, 1, 1) / np.sqrt(rv + self.eps).astype(x.dtype)
        return (T.as_tensor(x) - rm.astype(x.dtype)) * scale + self.beta.reshape(1, -1, 1, 1)


class ELU(Module):
    def __init__(self, alpha=1.0):
        super().__init__()
        self.alpha = alpha

    def forward(self, x):
        return T.elu(x, self.alpha)


class GELU(Module):
    def forward(self, x):
        return T.gelu(x)


class AvgPoolTime(Module):
    def __init__(self, kernel, stride=None):
        super().__init__()
        self.kernel = kernel
        self.stride = stride or kernel

    def forward(self, x):
        return T.avg_pool_time(x, self.kernel, self.stride)


class AdaptiveAvgPoolTime(Module):
    def __init__(self, target=1):
        super().__init__()
        self.target = target

    def forward(self, x):
        return T.adaptive_avg_pool_time(x, self.target)


class DropoutStream:
    """Counter-based mask source: mask ``i`` depends only on (seed, i)."""

    def __init__(self, seed=0):
        self.seed = int(seed)
        self.counter = 0
        self.frozen = False

    def mask(self, shape, p, dtype):
        gen = np.random.Generator(np.random.Philox(key=self.seed, counter=[self.counter, 0, 0, 0]))
        if not self.frozen:
            self.counter += 1
        keep = gen.random(shape) >= p
        return (keep / (1.0 - p)).astype(dtype)


class Dropout(Module):
    def __init__(self, p=0.5, stream=None):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("dropout probability must lie in [0, 1)")
        self.p = p
        self.stream = stream or DropoutStream()

    def forward(self, x):
        if not self.training or self.p == 0:
            return T.as_tensor(x)
        x = T.as_tensor(x)
        return T.dropout_mask(x, self.stream.mask(x.shape, self.p, x.dtype))


class Linear(Module):
    def __init__(self, in_dim, out_dim, bias=True, rng=None, init_std=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if init_std is None:
            w = _uniform(rng, (in_dim, out_dim), 1.0 / np.sqrt(in_dim))
        else:
            w = (rng.standard_normal((in_dim, out_dim)) * init_std).astype(T.default_dtype())
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_dim, dtype=T.default_dtype())) if bias else None

    def forward(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        dt = T.default_dtype()
        self.gamma = Parameter(np.ones(dim, dtype=dt))
        self.beta = Parameter(np.zeros(dim, dtype=dt))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Softmax(Module):
    def __init__(self, axis=-1):
        super().__init__()
        self.axis = axis

    def forward(self, x):
        return T.softmax(x, self.axis)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention; the last attention weights
    (B, heads, n, n) are kept on ``self.attention``."""

    def __init__(self, dim, heads, rng=None):
        super().__init__()
        if dim % heads:
            raise ValueError("embedding dim must be divisible by heads")
        rng = rng or np.random.default_rng(0)
        self.heads = heads
        self.dim = dim
        self.qkv = Linear(dim, 3 * dim, rng=rng, init_std=0.02)
        self.proj = Linear(dim, dim, rng=rng, init_std=0.02)
        self.attention = None

    def forward(self, x):
        b, n, d = x.shape
        h = self.heads
        hd = d // h
        qkv = self.qkv(x).reshape(b, n, 3, h, hd).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(hd))
        attn = T.softmax(scores, axis=-1)
        self.attention = attn
        ctx = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(ctx)


class PatchEmbed(Module):
    """Split (B, C, S, S) images into non-overlapping ``patch x patch``
    tiles and project each to ``dim``."""

    def __init__(self, image_size, patch, in_channels, dim, rng=None):
        super().__init__()
        if image_size % patch:
            raise ValueError("image size must be divisible by patch size")
        self.patch = patch
        self.grid = image_size // patch
        self.proj = Linear(in_channels * patch * patch, dim, rng=rng)

    @property
    def n_patches(self):
        return self.grid * self.grid

    def forward(self, x):
        b, c, s, _ = x.shape
        p, g = self.patch, self.grid
        tiles = x.reshape(b, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5).reshape(b, g * g, c * p * p)
        return self.proj(tiles)


class Sequential(Module):
    """Named, ordered layer list. ``forward(x, activations=dict)`` records
    each layer's output under its name."""

    def __init__(self, layers):
        super().__init__()
        self.names = [name for name, _ in layers]
        self.layers = [layer for _, layer in layers]

    def _children(self):
        for name, layer in zip(self.names, self.layers):
            yield name, layer

    def forward(self, x, activations=None):
        for name, layer in zip(self.names, self.layers):
            x = layer(x)
            if not np.all(np.isfinite(x.data)):
                raise FloatingPointError(f"non-finite values after layer {name!r}")
            if activations is not None:
                activations[name] = x
        return T.as_tensor(x)
