"""Dense arrays with reverse-mode differentiation on an explicit tape.

Only the kernels the character LM actually needs are provided: matrix
products, layer normalization, fused softmax cross-entropy, the gate
nonlinearities, embedding lookup and concatenation.  Values are numpy
arrays in float32 (the training default) or float64 (used by the
gradient-check tests).  Scalar losses are always computed and
accumulated in float64 so that per-character cross-entropies are exact
to well below any reported tolerance.

There is no broadcasting and no operator fusion beyond the softmax
cross-entropy; shapes must conform exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import LangvecError, ShapeError

LN_EPS = 1e-5


class Tensor:
    """A dense float array plus a gradient accumulator of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def assert_finite(self, label: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise LangvecError(f"non-finite values in {label}")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


class Tape:
    """Records operations in execution order; backward replays them reversed.

    A tape together with the tensors created on it is confined to one
    forward/backward pass.  Pass ``record=False`` for inference-only
    evaluation; the same operations then skip bookkeeping entirely.
    """

    def __init__(self, record: bool = True):
        self.recording = record
        self._ops = []

    def record(self, backward_fn):
        if self.recording:
            self._ops.append(backward_fn)

    def __len__(self):
        return len(self._ops)

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(x) into ``.grad`` of every tensor reachable from loss."""
        if loss.size != 1:
            raise LangvecError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self.recording:
            raise LangvecError("cannot backpropagate on a non-recording tape")
        _accumulate(loss, np.ones_like(loss.data))
        for op in reversed(self._ops):
            op()


class ParamStore:
    """Named trainable parameters with zero-initialized gradient accumulators.

    A store may be shared read-only across threads for inference; a
    trainer owns it exclusively while mutating values or gradients.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise LangvecError(f"duplicate parameter name {name!r}")
        t = Tensor(values, dtype=self.dtype)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for t in self._params.values():
            t.grad[...] = 0.0

    def grad_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            g = t.grad.astype(np.float64, copy=False)
            total += float(np.dot(g.reshape(-1), g.reshape(-1)))
        return float(np.sqrt(total))

    def clip_grads(self, max_norm: float) -> float:
        """Scale all gradients so the global norm is at most ``max_norm``.

        Returns the pre-clip global norm.
        """
        norm = self.grad_norm()
        if max_norm > 0 and norm > max_norm:
            scale = self.dtype.type(max_norm / norm)
            for t in self._params.values():
                t.grad *= scale
        return norm

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for name, arr in values.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} != expected {t.data.shape}")
            t.data[...] = arr

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for name, t in self._params.items():
            out.add(name, t.data)
        return out


# ---------------------------------------------------------------------------
# Operations.  Each takes the tape first, computes forward with numpy and,
# when the tape is recording, registers a closure that scatters the output
# gradient back onto its inputs.


def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands; inner dimensions must agree."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim > 0 else None):
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd)

    if tape.recording:
        def backward():
            if out.grad is None:
                return
            g = out.grad
            if ad.ndim == 2 and bd.ndim == 2:
                _accumulate(a, g @ bd.T)
                _accumulate(b, ad.T @ g)
            elif ad.ndim == 1 and bd.ndim == 2:
                _accumulate(a, bd @ g)
                _accumulate(b, np.outer(ad, g))
            elif ad.ndim == 2 and bd.ndim == 1:
                _accumulate(a, np.outer(g, bd))
                _accumulate(b, ad.T @ g)
            else:
                _accumulate(a, g * bd)
                _accumulate(b, g * ad)
        tape.record(backward)
    return out


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            _accumulate(a, out.grad)
            _accumulate(b, out.grad)
        tape.record(backward)
    return out


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            _accumulate(a, out.grad * b.data)
            _accumulate(b, out.grad * a.data)
        tape.record(backward)
    return out


def scale(tape: Tape, a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * a.dtype.type(s))
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            _accumulate(a, out.grad * s)
        tape.record(backward)
    return out


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y.astype(x.dtype, copy=False))
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            _accumulate(x, out.grad * out.data * (1.0 - out.data))
        tape.record(backward)
    return out


def tanh(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            _accumulate(x, out.grad * (1.0 - out.data * out.data))
        tape.record(backward)
    return out


def concat(tape: Tape, *parts: Tensor) -> Tensor:
    """Concatenate along the last axis; leading axes must agree."""
    if not parts:
        raise ShapeError("concat needs at least one operand")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat leading dimensions disagree: {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    if tape.recording:
        sizes = [p.shape[-1] for p in parts]
        def backward():
            if out.grad is None:
                return
            offset = 0
            for p, n in zip(parts, sizes):
                _accumulate(p, out.grad[..., offset:offset + n])
                offset += n
        tape.record(backward)
    return out


def tensor_sum(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64)))
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            _accumulate(x, np.full_like(x.data, x.dtype.type(out.grad.item())))
        tape.record(backward)
    return out


def layer_norm(tape: Tape, x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """gain * (x - mean) / sqrt(var + eps) + bias over a 1-D vector.

    Variance is the biased (divide-by-d) estimate.
    """
    if x.data.ndim != 1 or x.shape != gain.shape or x.shape != bias.shape:
        raise ShapeError(f"layer_norm shapes disagree: x={x.shape} gain={gain.shape} bias={bias.shape}")
    xd = x.data
    mean = xd.mean(dtype=np.float64)
    var = float(np.mean((xd.astype(np.float64) - mean) ** 2))
    inv = x.dtype.type(1.0 / np.sqrt(var + eps))
    xn = (xd - x.dtype.type(mean)) * inv
    out = Tensor(gain.data * xn + bias.data)

    if tape.recording:
        def backward():
            if out.grad is None:
                return
            g = out.grad
            _accumulate(gain, g * xn)
            _accumulate(bias, g)
            dxn = g * gain.data
            m1 = dxn.mean(dtype=np.float64)
            m2 = (dxn * xn).mean(dtype=np.float64)
            _accumulate(x, inv * (dxn - x.dtype.type(m1) - xn * x.dtype.type(m2)))
        tape.record(backward)
    return out


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Numerically stable softmax, computed in float64 (no tape)."""
    z = np.asarray(logits, dtype=np.float64)
    if temperature != 1.0:
        z = z / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_xent(tape: Tape, logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] in nats; the loss scalar is float64."""
    v = logits.size
    if logits.data.ndim != 1:
        raise ShapeError(f"softmax_xent expects a 1-D logit vector, got {logits.shape}")
    if not 0 <= target < v:
        raise IndexError(f"target {target} out of range for {v} classes")
    z = logits.data.astype(np.float64)
    m = z.max()
    e = np.exp(z - m)
    total = e.sum()
    loss = np.log(total) - (z[target] - m)
    out = Tensor(np.asarray(loss, dtype=np.float64))

    if tape.recording:
        p = e / total
        def backward():
            if out.grad is None:
                return
            d = p.copy()
            d[target] -= 1.0
            _accumulate(logits, (d * out.grad.item()).astype(logits.dtype))
        tape.record(backward)
    return out


def embedding_lookup(tape: Tape, table: Tensor, index: int) -> Tensor:
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    n = table.shape[0]
    if not 0 <= index < n:
        raise IndexError(f"embedding index {index} out of range for table of {n} rows")
    out = Tensor(table.data[index].copy())
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            table.grad[index] += out.grad
        tape.record(backward)
    return out
