"""Hot numeric kernels, each with a numba implementation and a numpy one.

The public names dispatch on :data:`fednilm._accel.BACKEND`. Both variants are
importable directly (``*_numba`` / ``*_numpy``) so the benchmark and the
cross-backend tests can compare them.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# 1-D convolution, stride 1, symmetric zero padding ("same" for odd kernels)
# ---------------------------------------------------------------------------


def _im2col(x, K, pad):
    B, Cin, T = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = sliding_window_view(xp, K, axis=2)  # (B, Cin, Tout, K)
    T_out = cols.shape[2]
    return cols.transpose(0, 2, 1, 3).reshape(B * T_out, Cin * K), T_out


def conv1d_forward_numpy(x, w, b, pad):
    # x: (B, Cin, T), w: (Cout, Cin, K), b: (Cout,)
    B = x.shape[0]
    Cout, _, K = w.shape
    cols, T_out = _im2col(x, K, pad)
    y = cols @ w.reshape(Cout, -1).T + b
    return np.ascontiguousarray(y.reshape(B, T_out, Cout).transpose(0, 2, 1))


def conv1d_backward_numpy(x, w, dy, pad):
    B, Cin, T = x.shape
    Cout, _, K = w.shape
    cols, T_out = _im2col(x, K, pad)
    dy2 = dy.transpose(0, 2, 1).reshape(B * T_out, Cout)
    dw = (dy2.T @ cols).reshape(Cout, Cin, K)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(Cout, -1)).reshape(B, T_out, Cin, K)
    dxp = np.zeros((B, Cin, T + 2 * pad))
    for k in range(K):
        dxp[:, :, k:k + T_out] += dcols[:, :, :, k].transpose(0, 2, 1)
    return dxp[:, :, pad:pad + T], dw, db


@njit(fast=True)
def conv1d_forward_numba(x, w, b, pad):
    B, Cin, T = x.shape
    Cout, _, K = w.shape
    T_out = T + 2 * pad - K + 1
    xp = np.zeros((B, Cin, T + 2 * pad))
    xp[:, :, pad:pad + T] = x
    y = np.empty((B, Cout, T_out))
    for n in range(B):
        for o in range(Cout):
            row = y[n, o]
            row[:] = b[o]
            for c in range(Cin):
                xr = xp[n, c]
                for k in range(K):
                    wk = w[o, c, k]
                    for t in range(T_out):
                        row[t] += wk * xr[t + k]
    return y


@njit(fast=True)
def conv1d_backward_numba(x, w, dy, pad):
    B, Cin, T = x.shape
    Cout, _, K = w.shape
    T_out = dy.shape[2]
    xp = np.zeros((B, Cin, T + 2 * pad))
    xp[:, :, pad:pad + T] = x
    dxp = np.zeros((B, Cin, T + 2 * pad))
    dw = np.zeros((Cout, Cin, K))
    db = np.zeros(Cout)
    for n in range(B):
        for o in range(Cout):
            g = dy[n, o]
            db[o] += g.sum()
            for c in range(Cin):
                xr = xp[n, c]
                dr = dxp[n, c]
                for k in range(K):
                    wk = w[o, c, k]
                    s = 0.0
                    for t in range(T_out):
                        s += g[t] * xr[t + k]
                        dr[t + k] += g[t] * wk
                    dw[o, c, k] += s
    return dxp[:, :, pad:pad + T].copy(), dw, db


# ---------------------------------------------------------------------------
# Run-length passes for activation-time thresholding
# ---------------------------------------------------------------------------


def merge_short_gaps_numpy(states, min_off):
    """Flip OFF runs shorter than ``min_off`` that sit between two ON runs."""
    out = states.copy()
    if min_off <= 1 or out.size == 0:
        return out
    starts, ends, values = _runs_numpy(out)
    for s, e, v in zip(starts, ends, values):
        if v == 0 and s > 0 and e < out.size and (e - s) < min_off:
            out[s:e] = 1
    return out


def remove_short_on_numpy(states, min_on):
    """Flip ON runs shorter than ``min_on`` to OFF."""
    out = states.copy()
    if min_on <= 1 or out.size == 0:
        return out
    starts, ends, values = _runs_numpy(out)
    for s, e, v in zip(starts, ends, values):
        if v == 1 and (e - s) < min_on:
            out[s:e] = 0
    return out


def _runs_numpy(x):
    change = np.flatnonzero(np.diff(x)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [x.size]))
    return starts, ends, x[starts]


@njit
def merge_short_gaps_numba(states, min_off):
    out = states.copy()
    n = out.size
    if min_off <= 1:
        return out
    i = 0
    while i < n:
        if out[i] == 0:
            j = i
            while j < n and out[j] == 0:
                j += 1
            if i > 0 and j < n and (j - i) < min_off:
                for k in range(i, j):
                    out[k] = 1
            i = j
        else:
            i += 1
    return out


@njit
def remove_short_on_numba(states, min_on):
    out = states.copy()
    n = out.size
    if min_on <= 1:
        return out
    i = 0
    while i < n:
        if out[i] == 1:
            j = i
            while j < n and out[j] == 1:
                j += 1
            if (j - i) < min_on:
                for k in range(i, j):
                    out[k] = 0
            i = j
        else:
            i += 1
    return out


if USE_NUMBA:
    conv1d_forward = conv1d_forward_numba
    conv1d_backward = conv1d_backward_numba
    merge_short_gaps = merge_short_gaps_numba
    remove_short_on = remove_short_on_numba
else:
    conv1d_forward = conv1d_forward_numpy
    conv1d_backward = conv1d_backward_numpy
    merge_short_gaps = merge_short_gaps_numpy
    remove_short_on = remove_short_on_numpy
