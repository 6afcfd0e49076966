"""LSTM / Bi-LSTM / dense layers with hand-written backpropagation through time.

Arrays are float64 and batch-major: sequences are ``(B, T, D)``. Gate
blocks inside ``W`` (4H x D), ``U`` (4H x H) and ``b`` (4H) are ordered
``[input, forget, cell-candidate, output]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x):
    # split form avoids overflow warnings for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell_forward(x, h, c, W, U, b):
    """One LSTM step. Works on single vectors or (B, .) batches."""
    H = h.shape[-1]
    a = x @ W.T + h @ U.T + b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = sigmoid(a[..., 3 * H:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


@dataclass
class LstmCache:
    xs: np.ndarray
    h_prev: np.ndarray  # (B, T, H) hidden state entering each step
    c_prev: np.ndarray
    gates: np.ndarray  # (B, T, 4H) activated gates
    tanh_c: np.ndarray


def lstm_layer_forward(xs, W, U, b, h0=None, c0=None):
    """Run one LSTM layer over ``xs`` (B, T, D).

    Returns ``(hs, (hT, cT), cache)`` where ``hs`` is (B, T, H).
    """
    B, T, _ = xs.shape
    H = U.shape[1]
    h = np.zeros((B, H)) if h0 is None else h0
    c = np.zeros((B, H)) if c0 is None else c0
    xw = xs @ W.T + b
    hs = np.empty((B, T, H))
    h_prev = np.empty((B, T, H))
    c_prev = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    tanh_c = np.empty((B, T, H))
    for t in range(T):
        h_prev[:, t] = h
        c_prev[:, t] = c
        a = xw[:, t] + h @ U.T
        gt = gates[:, t]
        gt[:, :2 * H] = sigmoid(a[:, :2 * H])
        gt[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        gt[:, 3 * H:] = sigmoid(a[:, 3 * H:])
        c = gt[:, H:2 * H] * c + gt[:, :H] * gt[:, 2 * H:3 * H]
        tc = np.tanh(c)
        h = gt[:, 3 * H:] * tc
        tanh_c[:, t] = tc
        hs[:, t] = h
    return hs, (h, c), LstmCache(xs, h_prev, c_prev, gates, tanh_c)


def lstm_layer_backward(dhs, cache: LstmCache, W, U, dhT=None, dcT=None):
    """Backpropagate through one LSTM layer.

    ``dhs`` is the loss gradient w.r.t. every emitted hidden state;
    ``dhT``/``dcT`` optionally seed the final carried state.
    Returns ``dxs, dW, dU, db, dh0, dc0``.
    """
    B, T, H = dhs.shape
    dh_next = np.zeros((B, H)) if dhT is None else dhT.copy()
    dc_next = np.zeros((B, H)) if dcT is None else dcT.copy()
    da = np.empty((B, T, 4 * H))
    g_all = cache.gates
    for t in range(T - 1, -1, -1):
        gt = g_all[:, t]
        i, f, g, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        tc = cache.tanh_c[:, t]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dat = da[:, t]
        dat[:, :H] = dc * g * i * (1.0 - i)
        dat[:, H:2 * H] = dc * cache.c_prev[:, t] * f * (1.0 - f)
        dat[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dat[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dat @ U
    flat = da.reshape(B * T, 4 * H)
    dW = flat.T @ cache.xs.reshape(B * T, -1)
    dU = flat.T @ cache.h_prev.reshape(B * T, H)
    db = flat.sum(axis=0)
    dxs = da @ W
    return dxs, dW, dU, db, dh_next, dc_next


def dense_forward(x, W, b, activation: str = "identity"):
    z = x @ W.T + b
    if activation == "identity":
        return z
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "softmax":
        return softmax(z, axis=-1)
    raise ValueError(f"unknown activation {activation!r}")


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def glorot(rng: np.random.Generator, shape) -> np.ndarray:
    fan_out, fan_in = shape[0], shape[1]
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)
