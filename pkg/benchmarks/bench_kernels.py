#!/usr/bin/env python3
"""Benchmark the compiled LSTM kernels against the pure-numpy fallback.

Times the single-sequence and batched cell (forward + backward) for both
backends in-process, then an end-to-end training step per backend in a
subprocess (backend selection happens at import, so each end-to-end run
needs its own interpreter).

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --skip-end-to-end
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from langvec import kernels
from langvec.tensor import LN_EPS


def make_cell(rng, nin, hidden, rows=None):
    def arr(*shape):
        return rng.normal(scale=0.5, size=shape).astype(np.float32)
    x_shape = (rows, nin) if rows else (nin,)
    s_shape = (rows, hidden) if rows else (hidden,)
    return (arr(*x_shape), arr(*s_shape), arr(*s_shape),
            arr(nin, 4 * hidden), arr(hidden, 4 * hidden), arr(4 * hidden),
            np.ones(4 * hidden, dtype=np.float32), np.ones(4 * hidden, dtype=np.float32),
            np.ones(hidden, dtype=np.float32), arr(hidden))


def time_cell(backend, cell, rows, iters):
    forward = backend.lstm_cell_forward_batch if rows else backend.lstm_cell_forward
    backward = backend.lstm_cell_backward_batch if rows else backend.lstm_cell_backward
    x, h, c, w_x, w_h, bias, g_x, g_h, g_c, b_c = cell
    h2, c2, cache = forward(*cell, LN_EPS)
    dh = np.ones_like(h2)
    dc = np.ones_like(c2)

    start = time.perf_counter()
    for _ in range(iters):
        h2, c2, cache = forward(*cell, LN_EPS)
    fwd = (time.perf_counter() - start) / iters

    start = time.perf_counter()
    for _ in range(iters):
        backward(x, h, c, w_x, w_h, g_x, g_h, g_c, *cache, dh, dc)
    bwd = (time.perf_counter() - start) / iters
    return fwd, bwd


def microbench(hidden_sizes, rows, iters):
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"kernel microbenchmark ({iters} iterations, float32, batch rows={rows})")
    header = f"{'cell':>22}  " + "  ".join(f"{name:>18}" for name in backends) + "   speedup"
    print(header)
    for hidden in hidden_sizes:
        nin = hidden + 8
        for label, batch_rows in ((f"H={hidden} single", None), (f"H={hidden} rows={rows}", rows)):
            cell = make_cell(rng, nin, hidden, rows=batch_rows)
            totals = {}
            for name, backend in backends.items():
                fwd, bwd = time_cell(backend, cell, batch_rows, iters)
                totals[name] = fwd + bwd
            cols = "  ".join(f"{totals[name] * 1e6:>13.1f} us" for name in backends)
            if "cython" in totals:
                ratio = f"{totals['python'] / totals['cython']:>8.1f}x"
            else:
                ratio = "     n/a"
            print(f"{label:>22}  {cols}  {ratio}")


def end_to_end_step(steps=40):
    """Time full training steps with the backend selected at import."""
    from langvec.batched import batch_lang_segs_from_ids, batch_nll
    from langvec.model import ModelConfig, init_params
    from langvec.tensor import Tape, scale
    from langvec.training import AdamState, adam_step

    config = ModelConfig(vocab_size=32, num_languages=8, char_dim=16,
                         hidden_dim=64, lang_dim=8)
    store = init_params(config, seed=0)
    opt = AdamState(store, learning_rate=1e-3)
    rng = np.random.default_rng(1)
    batch = []
    for _ in range(16):
        body = rng.integers(3, 32, size=40)
        batch.append(np.concatenate([[0], body, [1]]).astype(np.int32))
    lang_ids = rng.integers(0, 8, size=16)

    start = time.perf_counter()
    for _ in range(steps):
        tape = Tape()
        segs = batch_lang_segs_from_ids(tape, store, config, lang_ids)
        total, chars = batch_nll(tape, store, config, batch, segs)
        tape.backward(scale(tape, total, 1.0 / chars))
        adam_step(store, opt)
    per_step = (time.perf_counter() - start) / steps
    print(f"backend={kernels.backend_name():7s} batch=16x40 chars H=64: "
          f"{per_step * 1e3:.1f} ms/step ({1.0 / per_step:.1f} steps/s)")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--hidden", default="32,64,128",
                        help="comma-separated hidden sizes")
    parser.add_argument("--rows", type=int, default=16, help="batch rows")
    parser.add_argument("--iters", type=int, default=300)
    parser.add_argument("--skip-end-to-end", action="store_true")
    parser.add_argument("--end-to-end-only", action="store_true",
                        help="internal: run one end-to-end timing and exit")
    args = parser.parse_args(argv)

    if args.end_to_end_only:
        end_to_end_step()
        return 0

    microbench([int(h) for h in args.hidden.split(",")], args.rows, args.iters)

    if not args.skip_end_to_end:
        print("\nend-to-end training step per backend:")
        for force_python in (False, True):
            env = dict(os.environ)
            if force_python:
                env["LANGVEC_PURE_PYTHON"] = "1"
            else:
                env.pop("LANGVEC_PURE_PYTHON", None)
            subprocess.run([sys.executable, __file__, "--end-to-end-only"],
                           env=env, check=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
