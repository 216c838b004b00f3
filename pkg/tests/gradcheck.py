"""Central finite-difference oracle for gradient tests.

Independent of the tape: it only needs a loss closure that re-reads the
current parameter values, so it checks whatever gradient path produced
the analytic numbers.
"""

import numpy as np


def fd_gradient(loss_fn, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``array``."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = loss_fn()
        flat[i] = orig - h
        minus = loss_fn()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def fd_gradients(loss_fn, store, h: float = 1e-5) -> dict:
    """Finite-difference gradients for every parameter in a ParamStore."""
    return {name: fd_gradient(loss_fn, t.data, h) for name, t in store.items()}


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Elementwise |a-n| / max(|a|, |n|, floor), maximized.

    The floor judges near-zero entries absolutely (at tolerance * floor),
    which keeps finite-difference roundoff from reading as disagreement.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum.reduce([np.abs(a), np.abs(n), np.full_like(a, floor)])
    return float((np.abs(a - n) / denom).max())


def check_store_gradients(analytic: dict, numeric: dict, floor: float = 1e-3) -> float:
    worst = 0.0
    for name, a in analytic.items():
        worst = max(worst, max_rel_error(a, numeric[name], floor))
    return worst
