"""Hot kernels of the recurrent cell, with backend selection at import.

Two interchangeable implementations exist:

* ``_lstm_cy`` — Cython extension compiled at install time,
* ``_lstm_py`` — pure numpy fallback, always available.

The compiled backend is picked when importable; set the environment
variable ``LANGVEC_PURE_PYTHON=1`` to force the fallback (used by the
benchmark and the backend-equivalence tests).

Kernel API (identical in both backends):

    lstm_cell_forward(x, h, c, w_x, w_h, bias, g_x, g_h, g_c, b_c, eps)
        -> (h_new, c_new, cache)
    lstm_cell_backward(x, h, c, w_x, w_h, g_x, g_h, g_c, *cache,
                       d_h_new, d_c_new)
        -> (d_x, d_h, d_c, d_w_x, d_w_h, d_bias, d_g_x, d_g_h,
            d_g_c, d_b_c)

``cache`` is the positional tuple
``(xn, hn, inv_x, inv_h, si, sf, tg, so, cn, inv_c, tu)`` of saved
forward intermediates.  All data arrays of one call are contiguous and
share one dtype (float32 or float64); the cached inverse-deviation
scalars are always float64.

The ``*_batch`` variants take one row per sequence (x is rows x n_in,
h/c are rows x hidden) and step every row in lockstep; normalization is
per row, so rows stay independent.  Weight gradients come back summed
over rows, input/state gradients per row.
"""

import os

from . import _lstm_py

if os.environ.get("LANGVEC_PURE_PYTHON"):
    _active = _lstm_py
    BACKEND = "python"
else:
    try:
        from . import _lstm_cy
        _active = _lstm_cy
        BACKEND = "cython"
    except ImportError:
        _active = _lstm_py
        BACKEND = "python"

lstm_cell_forward = _active.lstm_cell_forward
lstm_cell_backward = _active.lstm_cell_backward
lstm_cell_forward_batch = _active.lstm_cell_forward_batch
lstm_cell_backward_batch = _active.lstm_cell_backward_batch


def backend_name() -> str:
    """Name of the backend selected at import ('cython' or 'python')."""
    return BACKEND


def available_backends() -> dict:
    """Map backend name -> kernel module, for benchmarks and tests."""
    out = {"python": _lstm_py}
    try:
        from . import _lstm_cy as cy
        out["cython"] = cy
    except ImportError:
        pass
    return out
