"""Pure-numpy fused kernels for the layer-normalized LSTM cell.

This is the fallback backend and the reference for the compiled one in
``_lstm_cy.pyx``: both implement the identical cell

    a  = LN(x @ w_x; g_x, 0) + LN(h @ w_h; g_h, 0) + bias
    i, f, g, o = split(a)
    c' = sigmoid(f) * c + sigmoid(i) * tanh(g)
    h' = sigmoid(o) * tanh(LN(c'; g_c, b_c))

with biased-variance layer norms.  Normalization statistics are
accumulated in float64 regardless of the working precision.

``lstm_cell_forward`` returns ``(h_new, c_new, cache)`` where ``cache``
is the tuple of saved intermediates consumed positionally by
``lstm_cell_backward``; see ``kernels.__init__`` for the exact layout.
"""

import math

import numpy as np


def _norm_stats(v, eps):
    mean = float(v.mean(dtype=np.float64))
    var = float(np.mean((v.astype(np.float64) - mean) ** 2))
    return mean, 1.0 / math.sqrt(var + eps)


def lstm_cell_forward(x, h, c, w_x, w_h, bias, g_x, g_h, g_c, b_c, eps):
    dt = x.dtype.type
    hidden = h.shape[0]

    ax = x @ w_x
    ah = h @ w_h
    mx, inv_x = _norm_stats(ax, eps)
    mh, inv_h = _norm_stats(ah, eps)
    xn = (ax - dt(mx)) * dt(inv_x)
    hn = (ah - dt(mh)) * dt(inv_h)
    a = g_x * xn + g_h * hn + bias

    with np.errstate(over="ignore"):
        si = 1.0 / (1.0 + np.exp(-a[:hidden]))
        sf = 1.0 / (1.0 + np.exp(-a[hidden:2 * hidden]))
        so = 1.0 / (1.0 + np.exp(-a[3 * hidden:]))
    tg = np.tanh(a[2 * hidden:3 * hidden])
    si = si.astype(x.dtype, copy=False)
    sf = sf.astype(x.dtype, copy=False)
    so = so.astype(x.dtype, copy=False)

    c_new = sf * c + si * tg
    mc, inv_c = _norm_stats(c_new, eps)
    cn = (c_new - dt(mc)) * dt(inv_c)
    tu = np.tanh(g_c * cn + b_c)
    h_new = so * tu

    cache = (xn, hn, inv_x, inv_h, si, sf, tg, so, cn, inv_c, tu)
    return h_new, c_new, cache


def _ln_backward(dy, normed, inv, dt):
    m1 = float(dy.mean(dtype=np.float64))
    m2 = float((dy * normed).mean(dtype=np.float64))
    return dt(inv) * (dy - dt(m1) - normed * dt(m2))


def lstm_cell_backward(x, h, c, w_x, w_h, g_x, g_h, g_c,
                       xn, hn, inv_x, inv_h, si, sf, tg, so, cn, inv_c, tu,
                       d_h_new, d_c_new):
    dt = x.dtype.type

    # h' = so * tanh(u), u = g_c * cn + b_c
    dso = d_h_new * tu
    du = d_h_new * so * (1.0 - tu * tu)
    dg_c = du * cn
    dc2 = d_c_new + _ln_backward(du * g_c, cn, inv_c, dt)

    # c' = sf * c + si * tg
    dsf = dc2 * c
    d_c = dc2 * sf
    dsi = dc2 * tg
    dtg = dc2 * si

    di = dsi * si * (1.0 - si)
    df = dsf * sf * (1.0 - sf)
    dg = dtg * (1.0 - tg * tg)
    do = dso * so * (1.0 - so)
    da = np.concatenate([di, df, dg, do])

    dg_x = da * xn
    dg_h = da * hn
    dax = _ln_backward(da * g_x, xn, inv_x, dt)
    dah = _ln_backward(da * g_h, hn, inv_h, dt)

    d_w_x = np.outer(x, dax)
    d_w_h = np.outer(h, dah)
    d_x = w_x @ dax
    d_h = w_h @ dah
    # d_bias is da itself, d_b_c is du itself; both are fresh arrays
    return d_x, d_h, d_c, d_w_x, d_w_h, da, dg_x, dg_h, dg_c, du


# ---------------------------------------------------------------------------
# Batched variants: one row per sequence, all rows stepped in lockstep.
# Normalization is per row, so rows stay independent.


def _norm_rows(v, eps, dt):
    mean = v.mean(axis=1, dtype=np.float64, keepdims=True)
    var = np.mean((v.astype(np.float64) - mean) ** 2, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = ((v - mean) * inv).astype(dt, copy=False)
    return normed, inv[:, 0]


def lstm_cell_forward_batch(x, h, c, w_x, w_h, bias, g_x, g_h, g_c, b_c, eps):
    dt = x.dtype
    hidden = h.shape[1]

    xn, inv_x = _norm_rows(x @ w_x, eps, dt)
    hn, inv_h = _norm_rows(h @ w_h, eps, dt)
    a = g_x * xn + g_h * hn + bias

    with np.errstate(over="ignore"):
        si = (1.0 / (1.0 + np.exp(-a[:, :hidden]))).astype(dt, copy=False)
        sf = (1.0 / (1.0 + np.exp(-a[:, hidden:2 * hidden]))).astype(dt, copy=False)
        so = (1.0 / (1.0 + np.exp(-a[:, 3 * hidden:]))).astype(dt, copy=False)
    tg = np.tanh(a[:, 2 * hidden:3 * hidden])

    c_new = sf * c + si * tg
    cn, inv_c = _norm_rows(c_new, eps, dt)
    tu = np.tanh(g_c * cn + b_c)
    h_new = so * tu

    cache = (xn, hn, inv_x, inv_h, si, sf, tg, so, cn, inv_c, tu)
    return h_new, c_new, cache


def _ln_backward_rows(dy, normed, inv, dt):
    m1 = dy.mean(axis=1, dtype=np.float64, keepdims=True)
    m2 = (dy * normed).mean(axis=1, dtype=np.float64, keepdims=True)
    return (inv[:, None] * (dy - m1 - normed * m2)).astype(dt, copy=False)


def lstm_cell_backward_batch(x, h, c, w_x, w_h, g_x, g_h, g_c,
                             xn, hn, inv_x, inv_h, si, sf, tg, so, cn, inv_c, tu,
                             d_h_new, d_c_new):
    dt = x.dtype

    dso = d_h_new * tu
    du = d_h_new * so * (1.0 - tu * tu)
    dg_c = (du * cn).sum(axis=0)
    db_c = du.sum(axis=0)
    dc2 = d_c_new + _ln_backward_rows(du * g_c, cn, inv_c, dt)

    dsf = dc2 * c
    d_c = dc2 * sf
    dsi = dc2 * tg
    dtg = dc2 * si

    da = np.concatenate([
        dsi * si * (1.0 - si),
        dsf * sf * (1.0 - sf),
        dtg * (1.0 - tg * tg),
        dso * so * (1.0 - so),
    ], axis=1)

    d_bias = da.sum(axis=0)
    dg_x = (da * xn).sum(axis=0)
    dg_h = (da * hn).sum(axis=0)
    dax = _ln_backward_rows(da * g_x, xn, inv_x, dt)
    dah = _ln_backward_rows(da * g_h, hn, inv_h, dt)

    d_w_x = x.T @ dax
    d_w_h = h.T @ dah
    d_x = dax @ w_x.T
    d_h = dah @ w_h.T
    return d_x, d_h, d_c, d_w_x, d_w_h, d_bias, dg_x, dg_h, dg_c, db_c
