"""Batched morphological layer kernels.

A morphological unit u reduces the n+1 competitors
    [w_u0, w_u1 + x_1, ..., w_un + x_n]
by max (dilation) or min (erosion); `is_min[u]` selects the reduction per
unit so a mixed layer is a single kernel call.  Hard kernels return the
winning competitor index (0 = bias, i+1 = coordinate i; ties go to the
lowest index).  Soft kernels use the shifted log-sum-exp.

numba is optional: the numpy paths compute identical values (and identical
tie-breaks), just slower.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _morph_forward_np(x, w, is_min):
    scores = x[:, None, :] + w[None, :, 1:]  # (B, U, n)
    out = np.empty((x.shape[0], w.shape[0]))
    win = np.empty((x.shape[0], w.shape[0]), np.int64)
    for sel, reduce_, arg_, cmp_ in (
        (~is_min, np.max, np.argmax, np.greater_equal),
        (is_min, np.min, np.argmin, np.less_equal),
    ):
        if not sel.any():
            continue
        s = scores[:, sel, :]
        idx = arg_(s, axis=2)
        best = np.take_along_axis(s, idx[:, :, None], 2)[:, :, 0]
        bias = w[sel, 0][None, :]
        use_bias = cmp_(bias, best)
        out[:, sel] = np.where(use_bias, bias, best)
        win[:, sel] = np.where(use_bias, 0, idx + 1)
    return out, win


def _morph_backward_np(g, x, w, win):
    B, n = x.shape
    U = w.shape[0]
    dw = np.zeros_like(w)
    np.add.at(dw.ravel(), (np.arange(U)[None, :] * (n + 1) + win).ravel(), g.ravel())
    dx = np.zeros_like(x)
    mask = win > 0
    rows = np.repeat(np.arange(B), U)[mask.ravel()]
    np.add.at(dx, (rows, win.ravel()[mask.ravel()] - 1), g.ravel()[mask.ravel()])
    return dw, dx


def _soft_morph_forward_np(x, w, is_min, beta):
    sign = np.where(is_min, -1.0, 1.0)[None, :]
    scores = np.concatenate(
        [np.broadcast_to(w[None, :, 0:1], (x.shape[0], w.shape[0], 1)), x[:, None, :] + w[None, :, 1:]],
        axis=2,
    )
    z = beta * sign[:, :, None] * scores
    m = z.max(axis=2)
    lse = m + np.log(np.exp(z - m[:, :, None]).sum(axis=2))
    return sign * lse / beta


def _soft_morph_backward_np(g, x, w, is_min, beta, out):
    sign = np.where(is_min, -1.0, 1.0)[None, :, None]
    scores = np.concatenate(
        [np.broadcast_to(w[None, :, 0:1], (x.shape[0], w.shape[0], 1)), x[:, None, :] + w[None, :, 1:]],
        axis=2,
    )
    p = np.exp(beta * sign * (scores - out[:, :, None]))  # softmax weights, rows sum to 1
    gp = g[:, :, None] * p
    dw = gp.sum(axis=0)
    dx = gp[:, :, 1:].sum(axis=1)
    return dw, dx


if HAVE_NUMBA:

    @numba.njit(parallel=True, cache=True)
    def _morph_forward_nb(x, w, is_min):  # pragma: no cover - exercised via dispatch
        B, n = x.shape
        U = w.shape[0]
        out = np.empty((B, U))
        win = np.empty((B, U), np.int64)
        for b in numba.prange(B):
            for u in range(U):
                best = w[u, 0]
                arg = 0
                if is_min[u]:
                    for i in range(n):
                        v = w[u, 1 + i] + x[b, i]
                        if v < best:
                            best = v
                            arg = i + 1
                else:
                    for i in range(n):
                        v = w[u, 1 + i] + x[b, i]
                        if v > best:
                            best = v
                            arg = i + 1
                out[b, u] = best
                win[b, u] = arg
        return out, win

    @numba.njit(cache=True)
    def _morph_backward_nb(g, x, w, win):  # pragma: no cover
        B, n = x.shape
        U = w.shape[0]
        dw = np.zeros_like(w)
        dx = np.zeros_like(x)
        for b in range(B):
            for u in range(U):
                k = win[b, u]
                dw[u, k] += g[b, u]
                if k > 0:
                    dx[b, k - 1] += g[b, u]
        return dw, dx

    @numba.njit(parallel=True, cache=True)
    def _soft_morph_forward_nb(x, w, is_min, beta):  # pragma: no cover
        B, n = x.shape
        U = w.shape[0]
        out = np.empty((B, U))
        for b in numba.prange(B):
            for u in range(U):
                sign = -1.0 if is_min[u] else 1.0
                m = sign * w[u, 0]
                for i in range(n):
                    v = sign * (w[u, 1 + i] + x[b, i])
                    if v > m:
                        m = v
                acc = np.exp(beta * (sign * w[u, 0] - m))
                for i in range(n):
                    acc += np.exp(beta * (sign * (w[u, 1 + i] + x[b, i]) - m))
                out[b, u] = sign * (m + np.log(acc)) / beta
        return out

    @numba.njit(parallel=True, cache=True)
    def _soft_morph_backward_nb(g, x, w, is_min, beta, out):  # pragma: no cover
        B, n = x.shape
        U = w.shape[0]
        dwf = np.zeros(w.shape)
        dxf = np.zeros(x.shape)
        for b in range(B):
            for u in range(U):
                sign = -1.0 if is_min[u] else 1.0
                p0 = np.exp(beta * sign * (w[u, 0] - out[b, u]))
                dwf[u, 0] += g[b, u] * p0
                for i in range(n):
                    p = np.exp(beta * sign * (w[u, 1 + i] + x[b, i] - out[b, u]))
                    dwf[u, 1 + i] += g[b, u] * p
                    dxf[b, i] += g[b, u] * p
        return dwf, dxf


def morph_forward(x, w, is_min):
    """Hard mixed dilation/erosion layer: returns (out, winner_index)."""
    if HAVE_NUMBA:
        return _morph_forward_nb(x, w, is_min)
    return _morph_forward_np(x, w, is_min)


def morph_backward(g, x, w, win):
    if HAVE_NUMBA:
        return _morph_backward_nb(g, x, w, win)
    return _morph_backward_np(g, x, w, win)


def soft_morph_forward(x, w, is_min, beta):
    """Log-sum-exp softened layer (overflow-safe shifted form)."""
    if HAVE_NUMBA:
        return _soft_morph_forward_nb(x, w, is_min, float(beta))
    return _soft_morph_forward_np(x, w, is_min, float(beta))


def soft_morph_backward(g, x, w, is_min, beta, out):
    if HAVE_NUMBA:
        return _soft_morph_backward_nb(g, x, w, is_min, float(beta), out)
    return _soft_morph_backward_np(g, x, w, is_min, float(beta), out)
