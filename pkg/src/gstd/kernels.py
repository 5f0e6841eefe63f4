"""Numeric kernels for the gender-representation loss and the toy trainer.

Every kernel exists twice: a vectorized pure-numpy version
(``*_numpy``) and a loop-style numba ``@njit`` version (``*_numba``). The
public names bind to the numba variants when numba imports successfully and
the ``GSTD_NUMBA`` environment variable is unset or truthy; set
``GSTD_NUMBA=0`` to force the numpy path. ``benchmarks/bench_kernels.py``
times the two side by side.

All kernels take plain float64 arrays; shape validation happens in the
wrappers in ``genderloss``.
"""

from __future__ import annotations

import os

import numpy as np

PROB_FLOOR = 1e-12

_flag = os.environ.get("GSTD_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

try:
    if not _want_numba:
        raise ImportError
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False


# ---------------------------------------------------------------------------
# pure-numpy implementations

def head_forward_numpy(h, w_g, b_g, w_out):
    """Frame-wise softmax(w_out @ relu(w_g @ h_t + b_g)); returns (T, 2)."""
    z = np.maximum(h @ w_g.T + b_g, 0.0)
    logits = z @ w_out.T
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def gr_loss_numpy(o, cls):
    """Sum over frames of -log p(true class), probabilities floored."""
    p = np.maximum(o[:, cls], PROB_FLOOR)
    return float(-np.log(p).sum())


def head_backward_numpy(h, w_g, b_g, w_out, cls):
    """Gradients of the (unscaled) frame-sum cross entropy w.r.t. the head."""
    z = np.maximum(h @ w_g.T + b_g, 0.0)
    logits = z @ w_out.T
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    o = e / e.sum(axis=1, keepdims=True)
    dlogits = o.copy()
    dlogits[:, cls] -= 1.0
    d_w_out = dlogits.T @ z
    dz = (dlogits @ w_out) * (z > 0.0)
    d_w_g = dz.T @ h
    d_b_g = dz.sum(axis=0)
    return d_w_g, d_b_g, d_w_out


def transducer_forward_numpy(log_probs, labels):
    """Negative log total probability over monotone blank/label alignments.

    ``log_probs`` has shape (T+1, U+1, V+1) with symbol 0 = blank; the frame
    axis is 1-indexed (row 0 is unused padding) so that entry [t, u, v] is
    the log-probability of emitting v at frame t having produced u labels.
    Alignments interleave label emissions (advance u, same frame) with
    frame-consuming blanks, and every path ends with the blank at [T, U].
    """
    t_len = log_probs.shape[0] - 1
    u_len = len(labels)
    neg_inf = -np.inf
    alpha = np.full((t_len + 1, u_len + 1), neg_inf)
    alpha[1, 0] = 0.0
    for t in range(1, t_len + 1):
        for u in range(0, u_len + 1):
            best = alpha[t, u]
            if t > 1:
                best = np.logaddexp(best, alpha[t - 1, u] + log_probs[t - 1, u, 0])
            if u > 0:
                best = np.logaddexp(best, alpha[t, u - 1] + log_probs[t, u - 1, labels[u - 1]])
            alpha[t, u] = best
    return float(-(alpha[t_len, u_len] + log_probs[t_len, u_len, 0]))


# ---------------------------------------------------------------------------
# numba implementations (loop style; same arithmetic, no BLAS dependence)

if NUMBA_ENABLED:

    @njit(cache=True, nogil=True)
    def head_forward_numba(h, w_g, b_g, w_out):  # pragma: no cover - timed path
        t_len, d = h.shape
        hid = w_g.shape[0]
        out = np.empty((t_len, 2))
        z = np.empty(hid)
        for t in range(t_len):
            for j in range(hid):
                acc = b_g[j]
                for k in range(d):
                    acc += w_g[j, k] * h[t, k]
                z[j] = acc if acc > 0.0 else 0.0
            l0 = 0.0
            l1 = 0.0
            for j in range(hid):
                l0 += w_out[0, j] * z[j]
                l1 += w_out[1, j] * z[j]
            m = l0 if l0 > l1 else l1
            e0 = np.exp(l0 - m)
            e1 = np.exp(l1 - m)
            s = e0 + e1
            out[t, 0] = e0 / s
            out[t, 1] = e1 / s
        return out

    @njit(cache=True, nogil=True)
    def gr_loss_numba(o, cls):  # pragma: no cover - timed path
        total = 0.0
        for t in range(o.shape[0]):
            p = o[t, cls]
            if p < PROB_FLOOR:
                p = PROB_FLOOR
            total -= np.log(p)
        return total

    @njit(cache=True, nogil=True)
    def head_backward_numba(h, w_g, b_g, w_out, cls):  # pragma: no cover
        t_len, d = h.shape
        hid = w_g.shape[0]
        d_w_g = np.zeros((hid, d))
        d_b_g = np.zeros(hid)
        d_w_out = np.zeros((2, hid))
        z = np.empty(hid)
        for t in range(t_len):
            for j in range(hid):
                acc = b_g[j]
                for k in range(d):
                    acc += w_g[j, k] * h[t, k]
                z[j] = acc if acc > 0.0 else 0.0
            l0 = 0.0
            l1 = 0.0
            for j in range(hid):
                l0 += w_out[0, j] * z[j]
                l1 += w_out[1, j] * z[j]
            m = l0 if l0 > l1 else l1
            e0 = np.exp(l0 - m)
            e1 = np.exp(l1 - m)
            s = e0 + e1
            p0 = e0 / s
            p1 = e1 / s
            g0 = p0 - 1.0 if cls == 0 else p0
            g1 = p1 - 1.0 if cls == 1 else p1
            for j in range(hid):
                d_w_out[0, j] += g0 * z[j]
                d_w_out[1, j] += g1 * z[j]
                if z[j] > 0.0:
                    dz = g0 * w_out[0, j] + g1 * w_out[1, j]
                    d_b_g[j] += dz
                    for k in range(d):
                        d_w_g[j, k] += dz * h[t, k]
        return d_w_g, d_b_g, d_w_out

    @njit(cache=True, nogil=True)
    def transducer_forward_numba(log_probs, labels):  # pragma: no cover
        t_len = log_probs.shape[0] - 1
        u_len = labels.shape[0]
        alpha = np.full((t_len + 1, u_len + 1), -np.inf)
        alpha[1, 0] = 0.0
        for t in range(1, t_len + 1):
            for u in range(0, u_len + 1):
                best = alpha[t, u]
                if t > 1:
                    best = np.logaddexp(best, alpha[t - 1, u] + log_probs[t - 1, u, 0])
                if u > 0:
                    best = np.logaddexp(
                        best, alpha[t, u - 1] + log_probs[t, u - 1, labels[u - 1]]
                    )
                alpha[t, u] = best
        return -(alpha[t_len, u_len] + log_probs[t_len, u_len, 0])

    head_forward = head_forward_numba
    gr_loss = gr_loss_numba
    head_backward = head_backward_numba
    transducer_forward = transducer_forward_numba
else:
    head_forward = head_forward_numpy
    gr_loss = gr_loss_numpy
    head_backward = head_backward_numpy
    transducer_forward = transducer_forward_numpy
