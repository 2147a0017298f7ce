"""GRU recurrence as a single autodiff node with hand-written BPTT.

Several independent GRUs can be run in one time loop: their hidden states are
laid side by side and the recurrent weights form a block-diagonal matrix, so
one matmul per step serves all of them.  Parameters stay separate per GRU and
gradients of the off-diagonal blocks are dropped.

Gate convention (reset r, update z, candidate n)::

    r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
    z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
    n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
    h' = (1 - z) * n + z * h

Sequences are left-padded; at a masked step the state is carried unchanged,
so a left-padded sequence gives exactly the states of the unpadded one.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import DTYPE, ShapeError, Tensor, _make


class EmptySequenceError(ValueError):
    """Raised when an encoder receives a sequence of length zero."""


def _sigmoid_inplace(x: np.ndarray) -> np.ndarray:
    # 0.5 * (1 + tanh(x / 2)) is overflow-free and a single ufunc pass
    x *= 0.5
    np.tanh(x, out=x)
    x += 1.0
    x *= 0.5
    return x


def gru_recurrence(gates_in: Sequence[Tensor], w_hh: Sequence[Tensor], b_hh: Sequence[Tensor],
                   masks: Sequence[np.ndarray], h0: Sequence[np.ndarray | None] | None = None
                   ) -> list[Tensor]:
    """Run ``len(gates_in)`` GRUs in lockstep.

    ``gates_in[k]`` holds the input projections ``x W_ih + b_ih`` with shape
    ``[B, T_k, 3 H_k]`` (gate order r, z, n).  Sequences are right-aligned in
    time.  Returns per-GRU hidden sequences ``[B, T_k, H_k]``.
    """
    n_gru = len(gates_in)
    if n_gru == 0:
        return []
    batch = gates_in[0].shape[0]
    sizes = [w.shape[0] for w in w_hh]
    lens = [g.shape[1] for g in gates_in]
    for k in range(n_gru):
        if gates_in[k].shape[0] != batch or gates_in[k].shape[2] != 3 * sizes[k]:
            raise ShapeError(f"GRU {k}: gate input shape {gates_in[k].shape} inconsistent")
        if w_hh[k].shape != (sizes[k], 3 * sizes[k]):
            raise ShapeError(f"GRU {k}: recurrent weight shape {w_hh[k].shape}")
        if lens[k] < 1:
            raise EmptySequenceError("GRU input has zero time steps")
    T = max(lens)
    H = sum(sizes)
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    gi = np.zeros((batch, T, 3 * H), dtype=DTYPE)
    m = np.zeros((batch, T, H), dtype=DTYPE)
    W = np.zeros((H, 3 * H), dtype=DTYPE)
    bias = np.zeros(3 * H, dtype=DTYPE)
    h = np.zeros((batch, H), dtype=DTYPE)
    for k in range(n_gru):
        hk, lo, t0 = sizes[k], offs[k], T - lens[k]
        g = gates_in[k].data
        for gate in range(3):
            cols = slice(gate * H + lo, gate * H + lo + hk)
            gi[:, t0:, cols] = g[:, :, gate * hk:(gate + 1) * hk]
            W[lo:lo + hk, cols] = w_hh[k].data[:, gate * hk:(gate + 1) * hk]
            bias[cols] = b_hh[k].data[gate * hk:(gate + 1) * hk]
        m[:, t0:, lo:lo + hk] = np.asarray(masks[k], dtype=DTYPE)[:, :, None]
        if h0 is not None and h0[k] is not None:
            h[:, lo:lo + hk] = h0[k]

    # time-major copies keep per-step slices contiguous
    gi_t = np.ascontiguousarray(gi.transpose(1, 0, 2))
    m_t = np.ascontiguousarray(m.transpose(1, 0, 2))
    out_t = np.empty((T, batch, H), dtype=DTYPE)
    hs = np.empty((T, batch, H), dtype=DTYPE)
    rz_all = np.empty((T, batch, 2 * H), dtype=DTYPE)
    n_all = np.empty((T, batch, H), dtype=DTYPE)
    ghn_all = np.empty((T, batch, H), dtype=DTYPE)
    for t in range(T):
        hs[t] = h
        gh = h @ W
        gh += bias
        rz = gi_t[t, :, :2 * H] + gh[:, :2 * H]
        rz = _sigmoid_inplace(rz)
        r, z = rz[:, :H], rz[:, H:]
        ghn = gh[:, 2 * H:]
        n = np.tanh(gi_t[t, :, 2 * H:] + r * ghn)
        h = h + m_t[t] * (1.0 - z) * (n - h)
        rz_all[t], n_all[t], ghn_all[t] = rz, n, ghn
        out_t[t] = h
    out = out_t.transpose(1, 0, 2)

    def backward(G: np.ndarray):
        G_t = G.transpose(1, 0, 2)
        dgi_t = np.empty((T, batch, 3 * H), dtype=DTYPE)
        dgh_all = np.empty((T, batch, 3 * H), dtype=DTYPE)
        dh = np.zeros((batch, H), dtype=DTYPE)
        Wt = W.T
        for t in range(T - 1, -1, -1):
            dh = dh + G_t[t]
            h_prev, n, ghn = hs[t], n_all[t], ghn_all[t]
            r, z = rz_all[t, :, :H], rz_all[t, :, H:]
            mt = m_t[t]
            dhc = mt * dh
            dan = dhc * (1.0 - z) * (1.0 - n * n)
            dar = dan * ghn * r * (1.0 - r)
            daz = dhc * (h_prev - n) * z * (1.0 - z)
            dgi = dgi_t[t]
            dgi[:, :H] = dar
            dgi[:, H:2 * H] = daz
            dgi[:, 2 * H:] = dan
            dgh = dgh_all[t]
            dgh[:, :2 * H] = dgi[:, :2 * H]
            dgh[:, 2 * H:] = dan * r
            dh = dh - dhc + dhc * z + dgh @ Wt
        dW = hs.reshape(-1, H).T @ dgh_all.reshape(-1, 3 * H)
        db = dgh_all.sum(axis=(0, 1))
        dgi = dgi_t.transpose(1, 0, 2)
        grads = []
        for k in range(n_gru):
            hk, lo, t0 = sizes[k], offs[k], T - lens[k]
            gk = np.empty((batch, lens[k], 3 * hk), dtype=DTYPE)
            wk = np.empty((hk, 3 * hk), dtype=DTYPE)
            bk = np.empty(3 * hk, dtype=DTYPE)
            for gate in range(3):
                cols = slice(gate * H + lo, gate * H + lo + hk)
                gk[:, :, gate * hk:(gate + 1) * hk] = dgi[:, t0:, cols]
                wk[:, gate * hk:(gate + 1) * hk] = dW[lo:lo + hk, cols]
                bk[gate * hk:(gate + 1) * hk] = db[cols]
            grads.append((gk, wk, bk))
        return tuple(g[0] for g in grads) + tuple(g[1] for g in grads) + tuple(g[2] for g in grads)

    parents = tuple(gates_in) + tuple(w_hh) + tuple(b_hh)
    joint = _make(out, parents, backward)
    outs = []
    for k in range(n_gru):
        lo, t0 = offs[k], T - lens[k]
        outs.append(joint[:, t0:, lo:lo + sizes[k]])
    return outs
