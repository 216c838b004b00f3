"""Lockstep scoring of a batch of sequences.

The stepwise path in ``model`` records a dozen tape operations per
character per sequence; this module steps all sequences of a batch in
parallel, so the per-character cost is one batched cell per layer plus
one fused prediction head regardless of batch size.  Both paths compute
the identical sum of per-character losses, which the tests assert.

Sequences are padded to the longest batch member; padded positions are
masked out of the loss and therefore contribute exactly zero gradient
(rows never mix inside the cell, whose normalization is per row).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .corpus import BOS_ID, EOS_ID
from .errors import ShapeError
from .model import LstmLayer, ModelConfig, ParamStore
from .tensor import LN_EPS, Tape, Tensor, add, concat


def lookup_rows(tape: Tape, table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds per row."""
    indices = np.asarray(indices)
    out = Tensor(table.data[indices])
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, indices, out.grad)
        tape.record(backward)
    return out


def tile_row(tape: Tape, vec: Tensor, rows: int) -> Tensor:
    """Repeat a vector as the rows of a matrix; backward sums over rows."""
    if vec.data.ndim != 1:
        raise ShapeError(f"tile_row expects a vector, got {vec.shape}")
    out = Tensor(np.repeat(vec.data[None, :], rows, axis=0))
    if tape.recording:
        def backward():
            if out.grad is None:
                return
            if vec.grad is None:
                vec.grad = np.zeros_like(vec.data)
            vec.grad += out.grad.sum(axis=0)
        tape.record(backward)
    return out


def lstm_cell_batch(tape: Tape, x: Tensor, h: Tensor, c: Tensor, layer: LstmLayer) -> tuple[Tensor, Tensor]:
    h_new_d, c_new_d, cache = kernels.lstm_cell_forward_batch(
        x.data, h.data, c.data,
        layer.w_x.data, layer.w_h.data, layer.bias.data,
        layer.ln_x_gain.data, layer.ln_h_gain.data,
        layer.ln_c_gain.data, layer.ln_c_bias.data, LN_EPS)
    h_new, c_new = Tensor(h_new_d), Tensor(c_new_d)

    if tape.recording:
        def backward():
            if h_new.grad is None and c_new.grad is None:
                return
            dh = h_new.grad if h_new.grad is not None else np.zeros_like(h_new_d)
            dc = c_new.grad if c_new.grad is not None else np.zeros_like(c_new_d)
            grads = kernels.lstm_cell_backward_batch(
                x.data, h.data, c.data, layer.w_x.data, layer.w_h.data,
                layer.ln_x_gain.data, layer.ln_h_gain.data, layer.ln_c_gain.data,
                *cache, dh, dc)
            targets = (x, h, c, layer.w_x, layer.w_h, layer.bias,
                       layer.ln_x_gain, layer.ln_h_gain, layer.ln_c_gain, layer.ln_c_bias)
            for t, g in zip(targets, grads):
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
        tape.record(backward)
    return h_new, c_new


def head_xent_masked(tape: Tape, z: Tensor, w_p: Tensor, b_p: Tensor,
                     w_o: Tensor, b_o: Tensor, targets: np.ndarray,
                     mask: np.ndarray) -> Tensor:
    """Fused prediction head: affine -> tanh -> affine -> cross-entropy.

    Returns the float64 sum of per-row losses over rows with a true
    mask; masked rows contribute no loss and no gradient.
    """
    hidden = np.tanh(z.data @ w_p.data + b_p.data)
    logits = hidden @ w_o.data + b_o.data

    z64 = logits.astype(np.float64)
    m = z64.max(axis=1, keepdims=True)
    e = np.exp(z64 - m)
    total = e.sum(axis=1, keepdims=True)
    rows = np.arange(len(targets))
    losses = np.log(total[:, 0]) - (z64[rows, targets] - m[:, 0])
    loss = Tensor(np.asarray((losses * mask).sum(), dtype=np.float64))

    if tape.recording:
        p = e / total
        def backward():
            if loss.grad is None:
                return
            d = p.copy()
            d[rows, targets] -= 1.0
            d *= (mask * loss.grad.item())[:, None]
            d_logits = d.astype(z.dtype)
            if w_o.grad is None:
                w_o.grad = np.zeros_like(w_o.data)
            if b_o.grad is None:
                b_o.grad = np.zeros_like(b_o.data)
            w_o.grad += hidden.T @ d_logits
            b_o.grad += d_logits.sum(axis=0)
            d_hidden = (d_logits @ w_o.data.T) * (1.0 - hidden * hidden)
            if w_p.grad is None:
                w_p.grad = np.zeros_like(w_p.data)
            if b_p.grad is None:
                b_p.grad = np.zeros_like(b_p.data)
            w_p.grad += z.data.T @ d_hidden
            b_p.grad += d_hidden.sum(axis=0)
            if z.grad is None:
                z.grad = np.zeros_like(z.data)
            z.grad += d_hidden @ w_p.data.T
        tape.record(backward)
    return loss


def pad_batch(id_arrays) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length id arrays into (ids, mask); pads with BOS."""
    rows = len(id_arrays)
    width = max(len(ids) for ids in id_arrays)
    ids = np.full((rows, width), BOS_ID, dtype=np.int32)
    mask = np.zeros((rows, width), dtype=np.float64)
    for i, seq in enumerate(id_arrays):
        ids[i, :len(seq)] = seq
        mask[i, :len(seq)] = 1.0
    return ids, mask


def batch_nll(tape: Tape, store: ParamStore, config: ModelConfig,
              id_arrays, lang_segs) -> tuple[Tensor, int]:
    """Summed nll in nats over a batch of [BOS..EOS] sequences.

    ``lang_segs`` are three tensors of shape (rows, lang_dim): per-row
    language segments (rows of the embedding tables during training, or
    a tiled constant vector during scoring/estimation).
    """
    for ids in id_arrays:
        if len(ids) < 2 or ids[0] != BOS_ID or ids[-1] != EOS_ID:
            raise ValueError("token sequences must be [BOS, ..., EOS] with length >= 2")
    ids, mask = pad_batch(id_arrays)
    rows, width = ids.shape
    h = config.hidden_dim
    layer1 = LstmLayer.from_store(store, 1)
    layer2 = LstmLayer.from_store(store, 2)
    zeros = np.zeros((rows, h), dtype=store.dtype)
    h1, c1 = Tensor(zeros.copy()), Tensor(zeros.copy())
    h2, c2 = Tensor(zeros.copy()), Tensor(zeros.copy())

    total = None
    for t in range(1, width):
        emb = lookup_rows(tape, store["char_embed"], ids[:, t - 1])
        x1 = concat(tape, emb, lang_segs[0])
        h1, c1 = lstm_cell_batch(tape, x1, h1, c1, layer1)
        x2 = concat(tape, h1, lang_segs[1])
        h2, c2 = lstm_cell_batch(tape, x2, h2, c2, layer2)
        z = concat(tape, h2, lang_segs[2])
        step_loss = head_xent_masked(tape, z, store["head.w"], store["head.bias"],
                                     store["out.w"], store["out.bias"],
                                     ids[:, t], mask[:, t])
        total = step_loss if total is None else add(tape, total, step_loss)
    chars = int(mask.sum()) - rows
    return total, chars


def batch_lang_segs_from_ids(tape: Tape, store: ParamStore, config: ModelConfig,
                             lang_ids: np.ndarray):
    """Per-row language segments gathered from the embedding tables."""
    lang_ids = np.asarray(lang_ids)
    if config.tied_lang_embedding:
        seg = lookup_rows(tape, store["lang_embed"], lang_ids)
        return (seg, seg, seg)
    return tuple(lookup_rows(tape, store[f"lang_embed_{k}"], lang_ids) for k in (1, 2, 3))


def batch_lang_segs_from_vector(tape: Tape, vector_segs, rows: int):
    """Per-row segments tiled from single-vector segment tensors."""
    if vector_segs[0] is vector_segs[1] is vector_segs[2]:
        seg = tile_row(tape, vector_segs[0], rows)
        return (seg, seg, seg)
    return tuple(tile_row(tape, seg, rows) for seg in vector_segs)


def score_sequences_batched(store: ParamStore, config: ModelConfig, id_arrays,
                            vector_segs, chunk: int = 64) -> tuple[float, int]:
    """Total nats and characters for sequences under one language vector."""
    tape = Tape(record=False)
    nats = 0.0
    chars = 0
    for start in range(0, len(id_arrays), chunk):
        part = id_arrays[start:start + chunk]
        segs = batch_lang_segs_from_vector(tape, vector_segs, len(part))
        loss, n = batch_nll(tape, store, config, part, segs)
        nats += loss.item()
        chars += n
    return nats, chars
