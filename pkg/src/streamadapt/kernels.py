"""Hot numeric kernels with a numba path and a numpy path.

Every public function dispatches on ``USE_NUMBA``; both paths compute the
same quantity and are cross-checked in the test suite. Loops in the numba
kernels run serially in a fixed order so gradients are reproducible
bit-for-bit for a given input.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import HAVE_NUMBA, jit_options, njit

USE_NUMBA = HAVE_NUMBA


def conv_out_len(length, kernel, stride, pad):
    return (length + 2 * pad - kernel) // stride + 1


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(**jit_options())
def _im2col_nb(x, kernel, stride, pad):
    n_batch, n_in, length = x.shape
    out_len = (length + 2 * pad - kernel) // stride + 1
    cols = np.zeros((n_batch * out_len, n_in * kernel), dtype=x.dtype)
    for n in range(n_batch):
        for t in range(out_len):
            r = n * out_len + t
            base = t * stride - pad
            for c in range(n_in):
                for k in range(kernel):
                    i = base + k
                    if 0 <= i < length:
                        cols[r, c * kernel + k] = x[n, c, i]
    return cols


@njit(**jit_options())
def _conv1d_forward_nb(x, w, b, stride, pad):
    n_batch, n_in, length = x.shape
    n_out, _, kernel = w.shape
    out_len = (length + 2 * pad - kernel) // stride + 1
    cols = _im2col_nb(x, kernel, stride, pad)
    prod = np.dot(cols, w.reshape(n_out, n_in * kernel).T)
    y = np.empty((n_batch, n_out, out_len), dtype=x.dtype)
    for n in range(n_batch):
        for t in range(out_len):
            r = n * out_len + t
            for o in range(n_out):
                y[n, o, t] = prod[r, o] + b[o]
    return y, cols


@njit(**jit_options())
def _conv1d_backward_nb(cols, w, dy, length, stride, pad, need_dx):
    n_out, n_in, kernel = w.shape
    n_batch, _, out_len = dy.shape
    gmat = np.empty((n_batch * out_len, n_out), dtype=dy.dtype)
    acc = np.zeros(n_out, dtype=np.float64)
    for n in range(n_batch):
        for o in range(n_out):
            for t in range(out_len):
                g = dy[n, o, t]
                gmat[n * out_len + t, o] = g
                acc[o] += g
    db = acc.astype(w.dtype)
    dw = np.dot(gmat.T, cols).reshape(n_out, n_in, kernel)
    if not need_dx:
        return np.empty((0, n_in, length), dtype=dy.dtype), dw, db
    dcols = np.dot(gmat, w.reshape(n_out, n_in * kernel))
    dx = np.zeros((n_batch, n_in, length), dtype=dy.dtype)
    for n in range(n_batch):
        for t in range(out_len):
            r = n * out_len + t
            base = t * stride - pad
            for c in range(n_in):
                for k in range(kernel):
                    i = base + k
                    if 0 <= i < length:
                        dx[n, c, i] += dcols[r, c * kernel + k]
    return dx, dw, db


@njit(**jit_options())
def _maxpool_forward_nb(x, width):
    n_batch, n_ch, length = x.shape
    out_len = length // width
    y = np.empty((n_batch, n_ch, out_len), dtype=x.dtype)
    arg = np.empty((n_batch, n_ch, out_len), dtype=np.int64)
    for n in range(n_batch):
        for c in range(n_ch):
            for t in range(out_len):
                base = t * width
                best = x[n, c, base]
                bi = 0
                for j in range(1, width):
                    v = x[n, c, base + j]
                    if v > best:
                        best = v
                        bi = j
                y[n, c, t] = best
                arg[n, c, t] = bi
    return y, arg


@njit(**jit_options())
def _maxpool_backward_nb(dy, arg, width, length):
    n_batch, n_ch, out_len = dy.shape
    dx = np.zeros((n_batch, n_ch, length), dtype=dy.dtype)
    for n in range(n_batch):
        for c in range(n_ch):
            for t in range(out_len):
                dx[n, c, t * width + arg[n, c, t]] = dy[n, c, t]
    return dx


@njit(**jit_options())
def _sosfilt_nb(sos, x):
    # x: (channels, samples); direct-form II transposed, zero initial state
    n_ch, n = x.shape
    n_sec = sos.shape[0]
    y = np.empty((n_ch, n), dtype=np.float64)
    for c in range(n_ch):
        for i in range(n):
            y[c, i] = x[c, i]
        for s in range(n_sec):
            b0 = sos[s, 0]
            b1 = sos[s, 1]
            b2 = sos[s, 2]
            a1 = sos[s, 4]
            a2 = sos[s, 5]
            z1 = 0.0
            z2 = 0.0
            for i in range(n):
                xi = y[c, i]
                yi = b0 * xi + z1
                z1 = b1 * xi - a1 * yi + z2
                z2 = b2 * xi - a2 * yi
                y[c, i] = yi
    return y


@njit(**jit_options())
def _ar1_nb(innov, coef):
    n_ch, n = innov.shape
    out = np.empty_like(innov)
    for c in range(n_ch):
        prev = 0.0
        for i in range(n):
            prev = coef * prev + innov[c, i]
            out[c, i] = prev
    return out


# ---------------------------------------------------------------------------
# numpy kernels
# ---------------------------------------------------------------------------


def _im2col(x, kernel, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = sliding_window_view(x, kernel, axis=2)
    if stride > 1:
        cols = cols[:, :, ::stride, :]
    return cols  # (N, C, Lout, K)


def _conv1d_forward_np(x, w, b, stride, pad):
    cols = _im2col(x, w.shape[2], stride, pad)
    y = np.tensordot(cols, w, axes=([1, 3], [1, 2]))  # (N, Lout, O)
    y = y.transpose(0, 2, 1) + b[None, :, None]
    return np.ascontiguousarray(y, dtype=x.dtype), cols


def _conv1d_backward_np(cols, w, dy, length, stride, pad, need_dx):
    kernel = w.shape[2]
    out_len = dy.shape[2]
    dw = np.tensordot(dy, cols, axes=([0, 2], [0, 2])).astype(w.dtype)
    db = dy.sum(axis=(0, 2), dtype=np.float64).astype(w.dtype)
    if not need_dx:
        return np.empty((0, w.shape[1], length), dtype=dy.dtype), dw, db
    dxp = np.zeros((dy.shape[0], w.shape[1], length + 2 * pad), dtype=dy.dtype)
    stop = stride * (out_len - 1) + 1
    for k in range(kernel):
        contrib = np.tensordot(dy, w[:, :, k], axes=([1], [0]))  # (N, Lout, C)
        dxp[:, :, k : k + stop : stride] += contrib.transpose(0, 2, 1)
    dx = dxp[:, :, pad : pad + length] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


def _maxpool_forward_np(x, width):
    n_batch, n_ch, length = x.shape
    out_len = length // width
    xr = x[:, :, : out_len * width].reshape(n_batch, n_ch, out_len, width)
    arg = xr.argmax(axis=3)
    y = np.take_along_axis(xr, arg[..., None], axis=3)[..., 0]
    return y, arg


def _maxpool_backward_np(dy, arg, width, length):
    n_batch, n_ch, out_len = dy.shape
    dxr = np.zeros((n_batch, n_ch, out_len, width), dtype=dy.dtype)
    np.put_along_axis(dxr, arg[..., None], dy[..., None], axis=3)
    dx = np.zeros((n_batch, n_ch, length), dtype=dy.dtype)
    dx[:, :, : out_len * width] = dxr.reshape(n_batch, n_ch, out_len * width)
    return dx


def _sosfilt_np(sos, x):
    from scipy.signal import sosfilt

    return sosfilt(sos, x, axis=-1)


def _ar1_np(innov, coef):
    from scipy.signal import lfilter

    return lfilter([1.0], [1.0, -coef], innov, axis=-1)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def conv1d_forward(x, w, b, stride=1, pad=0, return_cols=False):
    """Zero-padded strided 1-D convolution of ``x`` ``(N, C, L)`` with ``w`` ``(O, C, K)``.

    With ``return_cols`` the unfolded input is returned as well, for reuse by
    :func:`conv1d_backward`.
    """
    if USE_NUMBA:
        y, cols = _conv1d_forward_nb(np.ascontiguousarray(x), w, b, stride, pad)
    else:
        y, cols = _conv1d_forward_np(x, w, b, stride, pad)
    return (y, cols) if return_cols else y


def conv1d_backward(x, w, dy, stride=1, pad=0, cols=None, need_dx=True):
    """Return ``(dx, dw, db)``; ``dx`` is empty when ``need_dx`` is false.

    ``cols`` from :func:`conv1d_forward` skips re-unfolding ``x``; ``x`` is
    then only consulted for its length.
    """
    length = x.shape[2]
    if USE_NUMBA:
        if cols is None:
            cols = _im2col_nb(np.ascontiguousarray(x), w.shape[2], stride, pad)
        return _conv1d_backward_nb(cols, w, np.ascontiguousarray(dy), length, stride, pad,
                                   need_dx)
    if cols is None:
        cols = _im2col(x, w.shape[2], stride, pad)
    return _conv1d_backward_np(cols, w, dy, length, stride, pad, need_dx)


def maxpool_forward(x, width):
    if width == 1:
        return x, None
    if USE_NUMBA:
        return _maxpool_forward_nb(np.ascontiguousarray(x), width)
    return _maxpool_forward_np(x, width)


def maxpool_backward(dy, arg, width, length):
    if width == 1:
        return dy
    if USE_NUMBA:
        return _maxpool_backward_nb(np.ascontiguousarray(dy), arg, width, length)
    return _maxpool_backward_np(dy, arg, width, length)


def sosfilt(sos, x):
    """Zero-state cascaded biquad filter along the last axis of ``x`` (2-D)."""
    sos = np.asarray(sos, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if USE_NUMBA:
        return _sosfilt_nb(sos, np.ascontiguousarray(x))
    return _sosfilt_np(sos, x)


def ar1(innov, coef):
    """First-order autoregressive recursion ``y[i] = coef*y[i-1] + innov[i]``."""
    innov = np.atleast_2d(np.asarray(innov, dtype=np.float64))
    if USE_NUMBA:
        return _ar1_nb(np.ascontiguousarray(innov), float(coef))
    return _ar1_np(innov, coef)
