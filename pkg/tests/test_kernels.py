"""Kernel backends: equivalence, gradients against finite differences,
and lockstep consistency of the batched variants."""

import numpy as np
import pytest

from langvec import kernels
from langvec.tensor import LN_EPS

from gradcheck import fd_gradient, max_rel_error

BACKENDS = kernels.available_backends()


def make_cell(rng, nin, hidden, dtype, rows=None):
    def arr(*shape):
        return rng.normal(scale=0.7, size=shape).astype(dtype)
    x_shape = (rows, nin) if rows else (nin,)
    s_shape = (rows, hidden) if rows else (hidden,)
    return dict(
        x=arr(*x_shape), h=arr(*s_shape), c=arr(*s_shape),
        w_x=arr(nin, 4 * hidden), w_h=arr(hidden, 4 * hidden),
        bias=arr(4 * hidden),
        g_x=(1 + 0.2 * rng.normal(size=4 * hidden)).astype(dtype),
        g_h=(1 + 0.2 * rng.normal(size=4 * hidden)).astype(dtype),
        g_c=(1 + 0.2 * rng.normal(size=hidden)).astype(dtype),
        b_c=arr(hidden),
    )


def run_forward(backend, cell, batch=False):
    fn = backend.lstm_cell_forward_batch if batch else backend.lstm_cell_forward
    return fn(cell["x"], cell["h"], cell["c"], cell["w_x"], cell["w_h"], cell["bias"],
              cell["g_x"], cell["g_h"], cell["g_c"], cell["b_c"], LN_EPS)


def run_backward(backend, cell, cache, dh, dc, batch=False):
    fn = backend.lstm_cell_backward_batch if batch else backend.lstm_cell_backward
    return fn(cell["x"], cell["h"], cell["c"], cell["w_x"], cell["w_h"],
              cell["g_x"], cell["g_h"], cell["g_c"], *cache, dh, dc)


def test_backend_selection_reports_a_known_name():
    assert kernels.backend_name() in ("cython", "python")
    assert "python" in BACKENDS


def test_zero_weights_and_state_give_zero_outputs():
    hidden, nin = 6, 4
    cell = {k: np.zeros_like(v) for k, v in make_cell(np.random.default_rng(0), nin, hidden, np.float64).items()}
    for backend in BACKENDS.values():
        h2, c2, _ = run_forward(backend, cell)
        np.testing.assert_array_equal(h2, np.zeros(hidden))
        np.testing.assert_array_equal(c2, np.zeros(hidden))


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
def test_backends_agree_single(dtype, tol):
    if "cython" not in BACKENDS:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(1)
    cell = make_cell(rng, 5, 7, dtype)
    h_py, c_py, cache_py = run_forward(BACKENDS["python"], cell)
    h_cy, c_cy, cache_cy = run_forward(BACKENDS["cython"], cell)
    np.testing.assert_allclose(h_cy, h_py, rtol=tol, atol=tol)
    np.testing.assert_allclose(c_cy, c_py, rtol=tol, atol=tol)
    dh = rng.normal(size=7).astype(dtype)
    dc = rng.normal(size=7).astype(dtype)
    g_py = run_backward(BACKENDS["python"], cell, cache_py, dh, dc)
    g_cy = run_backward(BACKENDS["cython"], cell, cache_cy, dh, dc)
    for a, b in zip(g_py, g_cy):
        np.testing.assert_allclose(b, a, rtol=10 * tol, atol=10 * tol)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
def test_backends_agree_batched(dtype, tol):
    if "cython" not in BACKENDS:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(2)
    cell = make_cell(rng, 5, 7, dtype, rows=4)
    h_py, c_py, cache_py = run_forward(BACKENDS["python"], cell, batch=True)
    h_cy, c_cy, cache_cy = run_forward(BACKENDS["cython"], cell, batch=True)
    np.testing.assert_allclose(h_cy, h_py, rtol=tol, atol=tol)
    np.testing.assert_allclose(c_cy, c_py, rtol=tol, atol=tol)
    dh = rng.normal(size=(4, 7)).astype(dtype)
    dc = rng.normal(size=(4, 7)).astype(dtype)
    g_py = run_backward(BACKENDS["python"], cell, cache_py, dh, dc, batch=True)
    g_cy = run_backward(BACKENDS["cython"], cell, cache_cy, dh, dc, batch=True)
    for a, b in zip(g_py, g_cy):
        np.testing.assert_allclose(b, a, rtol=10 * tol, atol=10 * tol)


@pytest.mark.parametrize("backend_name", sorted(BACKENDS))
def test_batch_matches_per_row_single_calls(backend_name):
    backend = BACKENDS[backend_name]
    rng = np.random.default_rng(3)
    rows, nin, hidden = 3, 5, 6
    batch = make_cell(rng, nin, hidden, np.float64, rows=rows)
    h_b, c_b, _ = run_forward(backend, batch, batch=True)
    for r in range(rows):
        single = dict(batch, x=batch["x"][r], h=batch["h"][r], c=batch["c"][r])
        h_s, c_s, _ = run_forward(backend, single)
        np.testing.assert_allclose(h_b[r], h_s, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(c_b[r], c_s, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("backend_name", sorted(BACKENDS))
def test_gradients_match_finite_differences(backend_name):
    backend = BACKENDS[backend_name]
    rng = np.random.default_rng(4)
    cell = make_cell(rng, 4, 5, np.float64)
    wh = rng.normal(size=5)
    wc = rng.normal(size=5)

    def loss():
        h2, c2, _ = run_forward(backend, cell)
        return float(h2 @ wh + c2 @ wc)

    _, _, cache = run_forward(backend, cell)
    grads = run_backward(backend, cell, cache, wh.copy(), wc.copy())
    names = ("x", "h", "c", "w_x", "w_h", "bias", "g_x", "g_h", "g_c", "b_c")
    for name, analytic in zip(names, grads):
        numeric = fd_gradient(loss, cell[name])
        assert max_rel_error(analytic, numeric) < 1e-4, name


@pytest.mark.parametrize("backend_name", sorted(BACKENDS))
def test_batched_gradients_match_finite_differences(backend_name):
    backend = BACKENDS[backend_name]
    rng = np.random.default_rng(5)
    cell = make_cell(rng, 4, 5, np.float64, rows=3)
    wh = rng.normal(size=(3, 5))
    wc = rng.normal(size=(3, 5))

    def loss():
        h2, c2, _ = run_forward(backend, cell, batch=True)
        return float((h2 * wh).sum() + (c2 * wc).sum())

    _, _, cache = run_forward(backend, cell, batch=True)
    grads = run_backward(backend, cell, cache, wh.copy(), wc.copy(), batch=True)
    names = ("x", "h", "c", "w_x", "w_h", "bias", "g_x", "g_h", "g_c", "b_c")
    for name, analytic in zip(names, grads):
        numeric = fd_gradient(loss, cell[name])
        assert max_rel_error(analytic, numeric) < 1e-4, name


def test_forward_is_deterministic():
    rng = np.random.default_rng(6)
    cell = make_cell(rng, 4, 5, np.float32)
    for backend in BACKENDS.values():
        h1, c1, _ = run_forward(backend, cell)
        h2, c2, _ = run_forward(backend, cell)
        assert h1.tobytes() == h2.tobytes()
        assert c1.tobytes() == c2.tobytes()
