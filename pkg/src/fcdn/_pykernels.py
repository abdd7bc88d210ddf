"""Pure numpy implementations of the hot kernels.

These define the reference semantics; ``_ckernels.pyx`` must agree with
them to floating-point tolerance.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

BACKEND = "python"

# cap on im2col buffer size (elements) before chunking over electrodes
_IM2COL_LIMIT = 1 << 24


def fir_filter(x, taps):
    """Causal direct-form FIR along the last axis of a 2-D float64 array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    return lfilter(taps, 1.0, x, axis=-1)


def plv_pairs(phases):
    """Pairwise phase-locking magnitudes for a (K, M) phase array."""
    phases = np.asarray(phases, dtype=np.float64)
    m = phases.shape[1]
    z = np.exp(1j * phases)
    out = np.abs(z @ z.conj().T) / m
    np.fill_diagonal(out, 1.0)
    return np.minimum(out, 1.0)


def _chunks(n_rows, per_row):
    step = max(1, _IM2COL_LIMIT // max(per_row, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(n_rows, start + step))


def conv_time_forward(x, w):
    """Valid 1xk convolution along the last axis.

    x: (B, Cin, H, W), w: (Cout, Cin, k) -> (B, Cout, H, W - k + 1)
    """
    b, cin, h, width = x.shape
    cout, _, k = w.shape
    wo = width - k + 1
    out = np.empty((b, cout, h, wo), dtype=x.dtype)
    for sl in _chunks(h, b * wo * cin * k):
        win = sliding_window_view(x[:, :, sl, :], k, axis=3)  # B,Cin,h,Wo,k
        y = np.tensordot(win, w, axes=([1, 4], [1, 2]))  # B,h,Wo,Cout
        out[:, :, sl, :] = y.transpose(0, 3, 1, 2)
    return out


def conv_time_backward(x, w, gy):
    """Gradients of :func:`conv_time_forward` w.r.t. input and weight."""
    b, cin, h, width = x.shape
    cout, _, k = w.shape
    wo = gy.shape[3]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for sl in _chunks(h, b * wo * cin * k):
        win = sliding_window_view(x[:, :, sl, :], k, axis=3)
        g = gy[:, :, sl, :]
        gw += np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        # (B, h, Wo, Cin, k) column gradients folded back by shift-add
        gcols = np.tensordot(g, w, axes=([1], [0]))
        gxs = gx[:, :, sl, :]
        for j in range(k):
            gxs[:, :, :, j:j + wo] += gcols[..., j].transpose(0, 3, 1, 2)
    return gx, gw
