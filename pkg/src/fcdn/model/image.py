"""Bicubic resizing of conv-block maps and 0-255 image stacking."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.tensor import Tensor

CUBIC_A = -0.5
PAD = 2


def cubic_kernel(s, a: float = CUBIC_A):
    """Keys cubic-convolution kernel."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    out = np.zeros_like(s)
    m1 = s <= 1
    m2 = (s > 1) & (s < 2)
    out[m1] = (a + 2) * s[m1] ** 3 - (a + 3) * s[m1] ** 2 + 1
    out[m2] = a * s[m2] ** 3 - 5 * a * s[m2] ** 2 + 8 * a * s[m2] - 4 * a
    return out


@lru_cache(maxsize=64)
def _plan(n_in: int, n_out: int):
    """Gather plan on the edge-extended axis.

    Returns (base, idx, w, matrix): ``base`` (n_out,) is the extended index
    of the left neighbour, ``idx`` (n_out, 4) the four taps, ``w`` their
    weights, and ``matrix`` the dense (n_out, n_in) operator with the edge
    extension folded in.
    """
    scale = n_in / n_out
    x = (np.arange(n_out) + 0.5) * scale - 0.5
    j0 = np.floor(x).astype(np.int64)
    t = x - j0
    offs = np.arange(-1, 3)
    w = cubic_kernel(t[:, None] - offs[None, :])
    idx = j0[:, None] + offs[None, :] + PAD
    # extension operator: ext = E @ src, linear continuation past each edge
    ext = np.zeros((n_in + 2 * PAD, n_in))
    ext[PAD:PAD + n_in] = np.eye(n_in)
    for d in range(1, PAD + 1):
        ext[PAD - d, 0], ext[PAD - d, 1] = 1 + d, -d
        ext[PAD + n_in - 1 + d, n_in - 1], ext[PAD + n_in - 1 + d, n_in - 2] = 1 + d, -d
    gather = np.zeros((n_out, n_in + 2 * PAD))
    np.add.at(gather, (np.repeat(np.arange(n_out), 4), idx.ravel()), w.ravel())
    return j0 + PAD, idx, w, gather @ ext


def _extend(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    left = [a[..., :1] + d * (a[..., :1] - a[..., 1:2]) for d in range(PAD, 0, -1)]
    right = [a[..., -1:] + d * (a[..., -1:] - a[..., -2:-1]) for d in range(1, PAD + 1)]
    return np.moveaxis(np.concatenate(left + [a] + right, axis=-1), -1, axis)


def _resize_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    base, idx, w, _ = _plan(a.shape[axis], n_out)
    e = np.moveaxis(_extend(a, axis), axis, -1)
    anchor = e[..., base]
    # difference form: constants pass through exactly
    diff = e[..., idx] - anchor[..., None]
    out = anchor + (diff * w.astype(a.dtype)).sum(axis=-1)
    return np.moveaxis(out, -1, axis)


def bicubic_resize(x, size) -> Tensor:
    """Resize the last two axes of ``x`` to ``size`` with cubic convolution.

    Sampling follows the half-pixel (align-corners false) grid. Samples
    outside the source are linearly extrapolated from the two nearest
    edge samples, so affine images are reproduced exactly.
    """
    x = T.as_tensor(x)
    h_out, w_out = (size, size) if np.isscalar(size) else size
    if x.ndim < 2:
        raise ValueError("bicubic_resize needs at least a 2-D map")
    h_in, w_in = x.shape[-2:]
    if h_in < 2 or w_in < 2:
        raise ValueError(f"degenerate source map {h_in}x{w_in}; need at least 2x2")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("non-finite values in source map")
    out = _resize_axis(_resize_axis(x.data, h_out, x.ndim - 2), w_out, x.ndim - 1)
    a_h = _plan(h_in, h_out)[3].astype(x.dtype)
    a_w = _plan(w_in, w_out)[3].astype(x.dtype)

    def bw(g):
        return (np.matmul(np.matmul(a_h.T, g), a_w),)

    return T._make(out.astype(x.dtype), (x,), bw)


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense 1-D resize operator (float64), mainly for tests."""
    return _plan(n_in, n_out)[3].copy()


def normalize_and_stack(maps, degenerate_tol: float = 1e-6):
    """Min-max scale each (B, S, S) map to [0, 255] per sample and stack
    them as image planes.

    Returns ``(image, degenerate)`` with image (B, len(maps), S, S) and a
    boolean (B, len(maps)) array marking constant maps, which become zero
    planes.
    """
    maps = [T.as_tensor(m) for m in maps]
    if not maps:
        raise ValueError("no maps to stack")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise ValueError(f"map size mismatch: {m.shape} vs {shape}")
    squeeze = len(shape) == 2
    if squeeze:
        maps = [m.reshape(1, *shape) for m in maps]
    planes, flags = [], []
    for m in maps:
        lo = T.tmin(m, axis=(1, 2), keepdims=True)
        hi = T.tmax(m, axis=(1, 2), keepdims=True)
        span = hi.data - lo.data
        deg = span <= degenerate_tol * (1.0 + np.maximum(np.abs(hi.data), np.abs(lo.data)))
        keep = (~deg).astype(m.dtype)
        denom = (hi - lo) + deg.astype(m.dtype)
        planes.append((m - lo) * keep * 255.0 / denom)
        flags.append(deg.reshape(-1))
    img = T.stack(planes, axis=1)
    flags = np.stack(flags, axis=1)
    if squeeze:
        img = img.reshape(*img.shape[1:])
        flags = flags[0]
    return img, flags
