# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels for the layer-normalized LSTM cell.

Numerically mirrors ``kernels._lstm_py`` (same formulation, statistics
accumulated in double) but runs the whole cell in C loops.  Generated
for float32 and float64 via a fused type; all array arguments of one
call must share the dtype.
"""

import numpy as np

from libc.math cimport exp, sqrt, tanh

ctypedef fused real:
    float
    double


cdef inline double _sigmoid(double z) noexcept nogil:
    return 1.0 / (1.0 + exp(-z))


def lstm_cell_forward(real[::1] x, real[::1] h, real[::1] c,
                      real[:, ::1] w_x, real[:, ::1] w_h, real[::1] bias,
                      real[::1] g_x, real[::1] g_h, real[::1] g_c, real[::1] b_c,
                      double eps):
    cdef Py_ssize_t nin = x.shape[0]
    cdef Py_ssize_t hidden = h.shape[0]
    cdef Py_ssize_t gates = 4 * hidden
    cdef Py_ssize_t j, k

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    ax_a = np.zeros(gates, dtype=dtype)
    ah_a = np.zeros(gates, dtype=dtype)
    xn_a = np.empty(gates, dtype=dtype)
    hn_a = np.empty(gates, dtype=dtype)
    si_a = np.empty(hidden, dtype=dtype)
    sf_a = np.empty(hidden, dtype=dtype)
    tg_a = np.empty(hidden, dtype=dtype)
    so_a = np.empty(hidden, dtype=dtype)
    c_new_a = np.empty(hidden, dtype=dtype)
    cn_a = np.empty(hidden, dtype=dtype)
    tu_a = np.empty(hidden, dtype=dtype)
    h_new_a = np.empty(hidden, dtype=dtype)

    cdef real[::1] ax = ax_a, ah = ah_a, xn = xn_a, hn = hn_a
    cdef real[::1] si = si_a, sf = sf_a, tg = tg_a, so = so_a
    cdef real[::1] c_new = c_new_a, cn = cn_a, tu = tu_a, h_new = h_new_a
    cdef real xv
    cdef double acc, mean, var, inv_x, inv_h, inv_c, a_i, a_f, a_g, a_o

    with nogil:
        for k in range(nin):
            xv = x[k]
            for j in range(gates):
                ax[j] += xv * w_x[k, j]
        for k in range(hidden):
            xv = h[k]
            for j in range(gates):
                ah[j] += xv * w_h[k, j]

        acc = 0.0
        for j in range(gates):
            acc += ax[j]
        mean = acc / gates
        var = 0.0
        for j in range(gates):
            var += (ax[j] - mean) * (ax[j] - mean)
        inv_x = 1.0 / sqrt(var / gates + eps)
        for j in range(gates):
            xn[j] = <real>((ax[j] - mean) * inv_x)

        acc = 0.0
        for j in range(gates):
            acc += ah[j]
        mean = acc / gates
        var = 0.0
        for j in range(gates):
            var += (ah[j] - mean) * (ah[j] - mean)
        inv_h = 1.0 / sqrt(var / gates + eps)
        for j in range(gates):
            hn[j] = <real>((ah[j] - mean) * inv_h)

        for j in range(hidden):
            a_i = g_x[j] * xn[j] + g_h[j] * hn[j] + bias[j]
            a_f = g_x[hidden + j] * xn[hidden + j] + g_h[hidden + j] * hn[hidden + j] + bias[hidden + j]
            a_g = g_x[2 * hidden + j] * xn[2 * hidden + j] + g_h[2 * hidden + j] * hn[2 * hidden + j] + bias[2 * hidden + j]
            a_o = g_x[3 * hidden + j] * xn[3 * hidden + j] + g_h[3 * hidden + j] * hn[3 * hidden + j] + bias[3 * hidden + j]
            si[j] = <real>_sigmoid(a_i)
            sf[j] = <real>_sigmoid(a_f)
            tg[j] = <real>tanh(a_g)
            so[j] = <real>_sigmoid(a_o)
            c_new[j] = sf[j] * c[j] + si[j] * tg[j]

        acc = 0.0
        for j in range(hidden):
            acc += c_new[j]
        mean = acc / hidden
        var = 0.0
        for j in range(hidden):
            var += (c_new[j] - mean) * (c_new[j] - mean)
        inv_c = 1.0 / sqrt(var / hidden + eps)
        for j in range(hidden):
            cn[j] = <real>((c_new[j] - mean) * inv_c)
            tu[j] = <real>tanh(g_c[j] * cn[j] + b_c[j])
            h_new[j] = so[j] * tu[j]

    cache = (xn_a, hn_a, inv_x, inv_h, si_a, sf_a, tg_a, so_a, cn_a, inv_c, tu_a)
    return h_new_a, c_new_a, cache


def lstm_cell_backward(real[::1] x, real[::1] h, real[::1] c,
                       real[:, ::1] w_x, real[:, ::1] w_h,
                       real[::1] g_x, real[::1] g_h, real[::1] g_c,
                       real[::1] xn, real[::1] hn, double inv_x, double inv_h,
                       real[::1] si, real[::1] sf, real[::1] tg, real[::1] so,
                       real[::1] cn, double inv_c, real[::1] tu,
                       real[::1] d_h_new, real[::1] d_c_new):
    cdef Py_ssize_t nin = x.shape[0]
    cdef Py_ssize_t hidden = h.shape[0]
    cdef Py_ssize_t gates = 4 * hidden
    cdef Py_ssize_t j, k

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    du_a = np.empty(hidden, dtype=dtype)
    dg_c_a = np.empty(hidden, dtype=dtype)
    dc2_a = np.empty(hidden, dtype=dtype)
    d_c_a = np.empty(hidden, dtype=dtype)
    da_a = np.empty(gates, dtype=dtype)
    dg_x_a = np.empty(gates, dtype=dtype)
    dg_h_a = np.empty(gates, dtype=dtype)
    dax_a = np.empty(gates, dtype=dtype)
    dah_a = np.empty(gates, dtype=dtype)
    d_w_x_a = np.empty((nin, gates), dtype=dtype)
    d_w_h_a = np.empty((hidden, gates), dtype=dtype)
    d_x_a = np.empty(nin, dtype=dtype)
    d_h_a = np.empty(hidden, dtype=dtype)

    cdef real[::1] du = du_a, dg_c = dg_c_a, dc2 = dc2_a, d_c = d_c_a
    cdef real[::1] da = da_a, dg_x = dg_x_a, dg_h = dg_h_a, dax = dax_a, dah = dah_a
    cdef real[:, ::1] d_w_x = d_w_x_a, d_w_h = d_w_h_a
    cdef real[::1] d_x = d_x_a, d_h = d_h_a
    cdef double m1, m2, dsi, dsf, dtg, dso, dv, acc
    cdef real xv

    with nogil:
        # h' = so * tu and the cell layer norm
        for j in range(hidden):
            du[j] = <real>(d_h_new[j] * so[j] * (1.0 - <double>tu[j] * tu[j]))
            dg_c[j] = du[j] * cn[j]
        m1 = 0.0
        m2 = 0.0
        for j in range(hidden):
            dv = <double>du[j] * g_c[j]
            m1 += dv
            m2 += dv * cn[j]
        m1 /= hidden
        m2 /= hidden
        for j in range(hidden):
            dc2[j] = <real>(d_c_new[j] + inv_c * (<double>du[j] * g_c[j] - m1 - cn[j] * m2))

        # c' = sf*c + si*tg, then the four gate pre-activations
        for j in range(hidden):
            dsf = <double>dc2[j] * c[j]
            d_c[j] = dc2[j] * sf[j]
            dsi = <double>dc2[j] * tg[j]
            dtg = <double>dc2[j] * si[j]
            dso = <double>d_h_new[j] * tu[j]
            da[j] = <real>(dsi * si[j] * (1.0 - si[j]))
            da[hidden + j] = <real>(dsf * sf[j] * (1.0 - sf[j]))
            da[2 * hidden + j] = <real>(dtg * (1.0 - <double>tg[j] * tg[j]))
            da[3 * hidden + j] = <real>(dso * so[j] * (1.0 - so[j]))

        # a = g_x*xn + g_h*hn + bias; da doubles as d_bias
        m1 = 0.0
        m2 = 0.0
        for j in range(gates):
            dg_x[j] = da[j] * xn[j]
            dg_h[j] = da[j] * hn[j]
            dv = <double>da[j] * g_x[j]
            m1 += dv
            m2 += dv * xn[j]
        m1 /= gates
        m2 /= gates
        for j in range(gates):
            dax[j] = <real>(inv_x * (<double>da[j] * g_x[j] - m1 - xn[j] * m2))
        m1 = 0.0
        m2 = 0.0
        for j in range(gates):
            dv = <double>da[j] * g_h[j]
            m1 += dv
            m2 += dv * hn[j]
        m1 /= gates
        m2 /= gates
        for j in range(gates):
            dah[j] = <real>(inv_h * (<double>da[j] * g_h[j] - m1 - hn[j] * m2))

        for k in range(nin):
            xv = x[k]
            acc = 0.0
            for j in range(gates):
                d_w_x[k, j] = xv * dax[j]
                acc += w_x[k, j] * dax[j]
            d_x[k] = <real>acc
        for k in range(hidden):
            xv = h[k]
            acc = 0.0
            for j in range(gates):
                d_w_h[k, j] = xv * dah[j]
                acc += w_h[k, j] * dah[j]
            d_h[k] = <real>acc

    # d_bias is da itself, d_b_c is du itself; both are freshly allocated here
    return d_x_a, d_h_a, d_c_a, d_w_x_a, d_w_h_a, da_a, dg_x_a, dg_h_a, dg_c_a, du_a


# ---------------------------------------------------------------------------
# Batched variants: one row per sequence, normalization per row.
#
# The two affine maps are rows x gates GEMMs where BLAS beats scalar
# loops decisively, so the batched kernels are hybrids: numpy matmuls
# around a compiled pass for everything elementwise in between.


def lstm_cell_forward_batch(real[:, ::1] x, real[:, ::1] h, real[:, ::1] c,
                            real[:, ::1] w_x, real[:, ::1] w_h, real[::1] bias,
                            real[::1] g_x, real[::1] g_h, real[::1] g_c, real[::1] b_c,
                            double eps):
    ax_a = np.matmul(np.asarray(x), np.asarray(w_x))
    ah_a = np.matmul(np.asarray(h), np.asarray(w_h))
    return _fused_gates_forward(ax_a, ah_a, c, bias, g_x, g_h, g_c, b_c, eps)


def _fused_gates_forward(real[:, ::1] ax, real[:, ::1] ah, real[:, ::1] c,
                         real[::1] bias, real[::1] g_x, real[::1] g_h,
                         real[::1] g_c, real[::1] b_c, double eps):
    cdef Py_ssize_t rows = ax.shape[0]
    cdef Py_ssize_t gates = ax.shape[1]
    cdef Py_ssize_t hidden = gates // 4
    cdef Py_ssize_t b, j

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    xn_a = np.empty((rows, gates), dtype=dtype)
    hn_a = np.empty((rows, gates), dtype=dtype)
    si_a = np.empty((rows, hidden), dtype=dtype)
    sf_a = np.empty((rows, hidden), dtype=dtype)
    tg_a = np.empty((rows, hidden), dtype=dtype)
    so_a = np.empty((rows, hidden), dtype=dtype)
    c_new_a = np.empty((rows, hidden), dtype=dtype)
    cn_a = np.empty((rows, hidden), dtype=dtype)
    tu_a = np.empty((rows, hidden), dtype=dtype)
    h_new_a = np.empty((rows, hidden), dtype=dtype)
    inv_x_a = np.empty(rows, dtype=np.float64)
    inv_h_a = np.empty(rows, dtype=np.float64)
    inv_c_a = np.empty(rows, dtype=np.float64)

    cdef real[:, ::1] xn = xn_a, hn = hn_a
    cdef real[:, ::1] si = si_a, sf = sf_a, tg = tg_a, so = so_a
    cdef real[:, ::1] c_new = c_new_a, cn = cn_a, tu = tu_a, h_new = h_new_a
    cdef double[::1] inv_x = inv_x_a, inv_h = inv_h_a, inv_c = inv_c_a
    cdef double acc, mean, var, inv, a_i, a_f, a_g, a_o

    with nogil:
        for b in range(rows):
            acc = 0.0
            for j in range(gates):
                acc += ax[b, j]
            mean = acc / gates
            var = 0.0
            for j in range(gates):
                var += (ax[b, j] - mean) * (ax[b, j] - mean)
            inv = 1.0 / sqrt(var / gates + eps)
            inv_x[b] = inv
            for j in range(gates):
                xn[b, j] = <real>((ax[b, j] - mean) * inv)

            acc = 0.0
            for j in range(gates):
                acc += ah[b, j]
            mean = acc / gates
            var = 0.0
            for j in range(gates):
                var += (ah[b, j] - mean) * (ah[b, j] - mean)
            inv = 1.0 / sqrt(var / gates + eps)
            inv_h[b] = inv
            for j in range(gates):
                hn[b, j] = <real>((ah[b, j] - mean) * inv)

            for j in range(hidden):
                a_i = g_x[j] * xn[b, j] + g_h[j] * hn[b, j] + bias[j]
                a_f = g_x[hidden + j] * xn[b, hidden + j] + g_h[hidden + j] * hn[b, hidden + j] + bias[hidden + j]
                a_g = g_x[2 * hidden + j] * xn[b, 2 * hidden + j] + g_h[2 * hidden + j] * hn[b, 2 * hidden + j] + bias[2 * hidden + j]
                a_o = g_x[3 * hidden + j] * xn[b, 3 * hidden + j] + g_h[3 * hidden + j] * hn[b, 3 * hidden + j] + bias[3 * hidden + j]
                si[b, j] = <real>_sigmoid(a_i)
                sf[b, j] = <real>_sigmoid(a_f)
                tg[b, j] = <real>tanh(a_g)
                so[b, j] = <real>_sigmoid(a_o)
                c_new[b, j] = sf[b, j] * c[b, j] + si[b, j] * tg[b, j]

            acc = 0.0
            for j in range(hidden):
                acc += c_new[b, j]
            mean = acc / hidden
            var = 0.0
            for j in range(hidden):
                var += (c_new[b, j] - mean) * (c_new[b, j] - mean)
            inv = 1.0 / sqrt(var / hidden + eps)
            inv_c[b] = inv
            for j in range(hidden):
                cn[b, j] = <real>((c_new[b, j] - mean) * inv)
                tu[b, j] = <real>tanh(g_c[j] * cn[b, j] + b_c[j])
                h_new[b, j] = so[b, j] * tu[b, j]

    cache = (xn_a, hn_a, inv_x_a, inv_h_a, si_a, sf_a, tg_a, so_a, cn_a, inv_c_a, tu_a)
    return h_new_a, c_new_a, cache


def lstm_cell_backward_batch(real[:, ::1] x, real[:, ::1] h, real[:, ::1] c,
                             real[:, ::1] w_x, real[:, ::1] w_h,
                             real[::1] g_x, real[::1] g_h, real[::1] g_c,
                             real[:, ::1] xn, real[:, ::1] hn,
                             double[::1] inv_x, double[::1] inv_h,
                             real[:, ::1] si, real[:, ::1] sf, real[:, ::1] tg, real[:, ::1] so,
                             real[:, ::1] cn, double[::1] inv_c, real[:, ::1] tu,
                             real[:, ::1] d_h_new, real[:, ::1] d_c_new):
    dax_a, dah_a, d_c_a, d_bias_a, dg_x_a, dg_h_a, dg_c_a, db_c_a = \
        _fused_gates_backward(c, g_x, g_h, g_c, xn, hn, inv_x, inv_h,
                              si, sf, tg, so, cn, inv_c, tu, d_h_new, d_c_new)
    x_a, h_a = np.asarray(x), np.asarray(h)
    w_x_a, w_h_a = np.asarray(w_x), np.asarray(w_h)
    d_w_x_a = np.matmul(x_a.T, dax_a)
    d_w_h_a = np.matmul(h_a.T, dah_a)
    d_x_a = np.matmul(dax_a, w_x_a.T)
    d_h_a = np.matmul(dah_a, w_h_a.T)
    return d_x_a, d_h_a, d_c_a, d_w_x_a, d_w_h_a, d_bias_a, dg_x_a, dg_h_a, dg_c_a, db_c_a


def _fused_gates_backward(real[:, ::1] c,
                          real[::1] g_x, real[::1] g_h, real[::1] g_c,
                          real[:, ::1] xn, real[:, ::1] hn,
                          double[::1] inv_x, double[::1] inv_h,
                          real[:, ::1] si, real[:, ::1] sf, real[:, ::1] tg, real[:, ::1] so,
                          real[:, ::1] cn, double[::1] inv_c, real[:, ::1] tu,
                          real[:, ::1] d_h_new, real[:, ::1] d_c_new):
    cdef Py_ssize_t rows = c.shape[0]
    cdef Py_ssize_t hidden = c.shape[1]
    cdef Py_ssize_t gates = 4 * hidden
    cdef Py_ssize_t b, j

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    du_a = np.empty((rows, hidden), dtype=dtype)
    dc2_a = np.empty((rows, hidden), dtype=dtype)
    d_c_a = np.empty((rows, hidden), dtype=dtype)
    da_a = np.empty((rows, gates), dtype=dtype)
    dax_a = np.empty((rows, gates), dtype=dtype)
    dah_a = np.empty((rows, gates), dtype=dtype)
    d_bias_a = np.zeros(gates, dtype=dtype)
    dg_x_a = np.zeros(gates, dtype=dtype)
    dg_h_a = np.zeros(gates, dtype=dtype)
    dg_c_a = np.zeros(hidden, dtype=dtype)
    db_c_a = np.zeros(hidden, dtype=dtype)

    cdef real[:, ::1] du = du_a, dc2 = dc2_a, d_c = d_c_a
    cdef real[:, ::1] da = da_a, dax = dax_a, dah = dah_a
    cdef real[::1] d_bias = d_bias_a, dg_x = dg_x_a, dg_h = dg_h_a
    cdef real[::1] dg_c = dg_c_a, db_c = db_c_a
    cdef double m1, m2, dsi, dsf, dtg, dso, dv

    with nogil:
        for b in range(rows):
            for j in range(hidden):
                du[b, j] = <real>(d_h_new[b, j] * so[b, j] * (1.0 - <double>tu[b, j] * tu[b, j]))
                dg_c[j] += du[b, j] * cn[b, j]
                db_c[j] += du[b, j]
            m1 = 0.0
            m2 = 0.0
            for j in range(hidden):
                dv = <double>du[b, j] * g_c[j]
                m1 += dv
                m2 += dv * cn[b, j]
            m1 /= hidden
            m2 /= hidden
            for j in range(hidden):
                dc2[b, j] = <real>(d_c_new[b, j] + inv_c[b] * (<double>du[b, j] * g_c[j] - m1 - cn[b, j] * m2))

            for j in range(hidden):
                dsf = <double>dc2[b, j] * c[b, j]
                d_c[b, j] = dc2[b, j] * sf[b, j]
                dsi = <double>dc2[b, j] * tg[b, j]
                dtg = <double>dc2[b, j] * si[b, j]
                dso = <double>d_h_new[b, j] * tu[b, j]
                da[b, j] = <real>(dsi * si[b, j] * (1.0 - si[b, j]))
                da[b, hidden + j] = <real>(dsf * sf[b, j] * (1.0 - sf[b, j]))
                da[b, 2 * hidden + j] = <real>(dtg * (1.0 - <double>tg[b, j] * tg[b, j]))
                da[b, 3 * hidden + j] = <real>(dso * so[b, j] * (1.0 - so[b, j]))

            m1 = 0.0
            m2 = 0.0
            for j in range(gates):
                d_bias[j] += da[b, j]
                dg_x[j] += da[b, j] * xn[b, j]
                dg_h[j] += da[b, j] * hn[b, j]
                dv = <double>da[b, j] * g_x[j]
                m1 += dv
                m2 += dv * xn[b, j]
            m1 /= gates
            m2 /= gates
            for j in range(gates):
                dax[b, j] = <real>(inv_x[b] * (<double>da[b, j] * g_x[j] - m1 - xn[b, j] * m2))
            m1 = 0.0
            m2 = 0.0
            for j in range(gates):
                dv = <double>da[b, j] * g_h[j]
                m1 += dv
                m2 += dv * hn[b, j]
            m1 /= gates
            m2 /= gates
            for j in range(gates):
                dah[b, j] = <real>(inv_h[b] * (<double>da[b, j] * g_h[j] - m1 - hn[b, j] * m2))

    return dax_a, dah_a, d_c_a, d_bias_a, dg_x_a, dg_h_a, dg_c_a, db_c_a
