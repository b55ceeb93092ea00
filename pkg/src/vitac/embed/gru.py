"""Batched GRU layer with an explicit backward pass.

Gate stacking in the weight matrices is ``[reset, update, candidate]``. The
reset gate multiplies the previous hidden state before the candidate
transform::

    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    u = sigmoid(W_iu x + b_iu + W_hu h + b_hu)
    n = tanh(W_in x + b_in + W_hn (r * h) + b_hn)
    h' = (1 - u) * n + u * h

Sequences are time-major: ``(T, B, D)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GRUCache:
    x: np.ndarray  # (T, B, D)
    h_prev: np.ndarray  # (T, B, H), state entering each step
    r: np.ndarray
    u: np.ndarray
    n: np.ndarray


def gru_forward(x, h0, W_ih, W_hh, b_ih, b_hh, keep_cache=True):
    """Run one GRU layer over ``x``; returns all hidden states ``(T, B, H)``."""
    T, B, _ = x.shape
    H = W_hh.shape[1]
    Wr, Wu, Wn = W_hh[:H], W_hh[H : 2 * H], W_hh[2 * H :]
    br, bu, bn = b_hh[:H], b_hh[H : 2 * H], b_hh[2 * H :]
    gi = x @ W_ih.T + b_ih  # (T, B, 3H)
    hs = np.empty((T, B, H), dtype=x.dtype)
    if keep_cache:
        h_prev = np.empty_like(hs)
        rs, us, ns = np.empty_like(hs), np.empty_like(hs), np.empty_like(hs)
    h = h0
    for t in range(T):
        g = gi[t]
        r = sigmoid(g[:, :H] + h @ Wr.T + br)
        u = sigmoid(g[:, H : 2 * H] + h @ Wu.T + bu)
        n = np.tanh(g[:, 2 * H :] + (r * h) @ Wn.T + bn)
        if keep_cache:
            h_prev[t], rs[t], us[t], ns[t] = h, r, u, n
        h = (1.0 - u) * n + u * h
        hs[t] = h
    cache = GRUCache(x, h_prev, rs, us, ns) if keep_cache else None
    return hs, cache


def gru_backward(dhs, cache: GRUCache, W_ih, W_hh):
    """Backpropagate ``dL/dhs`` through the layer.

    Returns ``(dx, dh0, grads)`` with grads keyed ``W_ih, W_hh, b_ih, b_hh``.
    """
    T, B, H = dhs.shape
    Wr, Wu, Wn = W_hh[:H], W_hh[H : 2 * H], W_hh[2 * H :]
    dW_hh = np.zeros_like(W_hh)
    db_hh = np.zeros(3 * H, dtype=dhs.dtype)
    dgi = np.empty((T, B, 3 * H), dtype=dhs.dtype)
    dh_next = np.zeros((B, H), dtype=dhs.dtype)
    for t in reversed(range(T)):
        h, r, u, n = cache.h_prev[t], cache.r[t], cache.u[t], cache.n[t]
        dh_out = dhs[t] + dh_next
        dn = dh_out * (1.0 - u)
        du = dh_out * (h - n)
        dh = dh_out * u

        dan = dn * (1.0 - n * n)
        rh = r * h
        dW_hh[2 * H :] += dan.T @ rh
        drh = dan @ Wn
        dr = drh * h
        dh += drh * r

        dau = du * u * (1.0 - u)
        dar = dr * r * (1.0 - r)
        dW_hh[:H] += dar.T @ h
        dW_hh[H : 2 * H] += dau.T @ h
        dh += dar @ Wr + dau @ Wu

        db_hh[:H] += dar.sum(0)
        db_hh[H : 2 * H] += dau.sum(0)
        db_hh[2 * H :] += dan.sum(0)
        dgi[t, :, :H] = dar
        dgi[t, :, H : 2 * H] = dau
        dgi[t, :, 2 * H :] = dan
        dh_next = dh

    x = cache.x
    dW_ih = np.einsum("tbg,tbd->gd", dgi, x)
    db_ih = dgi.sum((0, 1))
    dx = dgi @ W_ih
    grads = {"W_ih": dW_ih, "W_hh": dW_hh, "b_ih": db_ih, "b_hh": db_hh}
    return dx, dh_next, grads
