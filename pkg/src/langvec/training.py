"""Adam training loop with uniform language sampling, early stopping and
versioned binary checkpoints."""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .batched import (batch_lang_segs_from_ids, batch_nll,
                      score_sequences_batched)
from .corpus import SplitSpec, TrainingPool, VerseCorpus, Vocabulary, encode_sequence
from .errors import (BadMagicError, CheckpointVersionError, ConfigError,
                     DivergenceError, TruncatedCheckpointError)
from .model import (ModelConfig, ParamStore, init_params,
                    lang_tensors_from_vector, language_vector)
from .tensor import Tape, scale

CHECKPOINT_MAGIC = b"MLLM"
CHECKPOINT_VERSION = 1

METRICS_HEADER = "step,train_nats_per_char,heldout_bits_per_char"


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 16
    eval_every: int = 100
    patience: int = 0           # evals without improvement before stopping; 0 disables
    seed: int = 0
    learning_rate: float = 1e-3
    grad_clip: float = 5.0      # global-norm clip; 0 disables
    max_seq_len: int = 512
    precision: str = "f32"

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, store: ParamStore, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}


def adam_step(store: ParamStore, opt: AdamState):
    """One update from the accumulated gradients; zeroes them afterwards."""
    for name, t in store.items():
        if not np.all(np.isfinite(t.grad)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r} at step {opt.t + 1}")
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    bias1 = 1.0 - b1 ** opt.t
    bias2 = 1.0 - b2 ** opt.t
    for name, t in store.items():
        g = t.grad
        m = opt.m[name]
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if opt.learning_rate != 0.0:
            m_hat = m / bias1
            v_hat = v / bias2
            t.data -= (opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)).astype(t.dtype)
    store.zero_grads()


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    languages: list[str]
    params: dict[str, np.ndarray]
    step: int = 0
    history: list[tuple[int, float]] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    def param_store(self, dtype=np.float32) -> ParamStore:
        store = ParamStore(dtype)
        for name, arr in self.params.items():
            store.add(name, arr)
        return store

    def lang_id(self, code: str):
        from .errors import UnknownLanguageError
        try:
            return self.languages.index(code)
        except ValueError:
            raise UnknownLanguageError(code, self.languages) from None

    def vector_for(self, code: str):
        return language_vector(self.params, self.config, self.lang_id(code))


def save_checkpoint(ckpt: Checkpoint, path):
    meta = json.dumps({
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.to_dict(),
        "languages": ckpt.languages,
        "step": ckpt.step,
        "history": [[int(s), float(b)] for s, b in ckpt.history],
    }).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    for name, arr in ckpt.params.items():
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<Q", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<Q", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedCheckpointError(f"checkpoint ends inside {what} ({len(data)}/{n} bytes)")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"{path}: not a checkpoint file (magic {magic!r})")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(version, CHECKPOINT_VERSION)
        meta_len = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))[0]
        meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) != 8:
                raise TruncatedCheckpointError("checkpoint ends inside a record header")
            name_len = struct.unpack("<Q", head)[0]
            name = _read_exact(fh, name_len, "parameter name").decode("utf-8")
            rank = struct.unpack("<Q", _read_exact(fh, 8, "rank"))[0]
            shape = tuple(struct.unpack("<Q", _read_exact(fh, 8, "dims"))[0] for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, 4 * count, f"parameter {name!r} data")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Checkpoint(
        config=ModelConfig.from_dict(meta["config"]),
        vocab=Vocabulary.from_dict(meta["vocab"]),
        languages=list(meta["languages"]),
        params=params,
        step=int(meta["step"]),
        history=[(int(s), float(b)) for s, b in meta["history"]],
        version=version,
    )


# ---------------------------------------------------------------------------
# Training


@dataclass
class MetricsRow:
    step: int
    train_nats_per_char: float
    heldout_bits_per_char: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint          # best held-out metric among evaluated steps
    metrics: list[MetricsRow]
    steps_run: int
    stopped_early: bool

    def metrics_csv(self) -> str:
        lines = [METRICS_HEADER]
        for row in self.metrics:
            lines.append(f"{row.step},{row.train_nats_per_char!r},{row.heldout_bits_per_char!r}")
        return "\n".join(lines) + "\n"


def heldout_bits_per_char(store: ParamStore, config: ModelConfig, vocab: Vocabulary,
                          corpus: VerseCorpus, split: SplitSpec, languages) -> float:
    """Mean held-out cross-entropy in bits/char, pooled over all languages."""
    nats = 0.0
    chars = 0
    for lang_id, lang in enumerate(languages):
        seqs = [encode_sequence(vocab, corpus.texts[(lang, vid)])
                for vid in split.heldout_for(corpus, lang)]
        if not seqs:
            continue
        segs = lang_tensors_from_vector(language_vector(store, config, lang_id),
                                        dtype=store.dtype)
        n, c = score_sequences_batched(store, config, seqs, segs)
        nats += n
        chars += c
    if chars == 0:
        raise ConfigError("no held-out verses to evaluate")
    return nats / chars / math.log(2.0)


def train(corpus: VerseCorpus, split: SplitSpec, vocab: Vocabulary,
          model_config: ModelConfig, config: TrainConfig,
          on_eval=None) -> TrainResult:
    """Train from scratch; returns the best-by-held-out checkpoint and metrics.

    ``on_eval`` is called as ``on_eval(metrics_row)`` after each held-out
    evaluation, letting callers persist the best checkpoint incrementally.
    Raises DivergenceError (carrying the best result so far in ``.result``)
    if the loss or a gradient goes non-finite.
    """
    pool = TrainingPool(corpus, split, vocab, config.max_seq_len)
    if pool.num_languages != model_config.num_languages:
        raise ConfigError(
            f"model expects {model_config.num_languages} languages, corpus has {pool.num_languages}")
    init_ss, sample_ss = np.random.SeedSequence(config.seed).spawn(2)
    store = init_params(model_config, init_ss, dtype=config.dtype)
    rng = np.random.default_rng(sample_ss)
    opt = AdamState(store, learning_rate=config.learning_rate)

    best_bits = math.inf
    best_values = None
    best_step = 0
    history: list[tuple[int, float]] = []
    metrics: list[MetricsRow] = []
    evals_since_improve = 0
    stopped_early = False
    nats_since_eval = 0.0
    chars_since_eval = 0

    def snapshot(values, step) -> Checkpoint:
        return Checkpoint(
            config=model_config, vocab=vocab, languages=list(pool.languages),
            params={name: np.asarray(arr, dtype=np.float32).copy() for name, arr in values.items()},
            step=step, history=list(history))

    def run_eval(step) -> bool:
        nonlocal best_bits, best_values, best_step, evals_since_improve
        nonlocal nats_since_eval, chars_since_eval
        bits = heldout_bits_per_char(store, model_config, vocab, corpus, split, pool.languages)
        train_nats = nats_since_eval / chars_since_eval if chars_since_eval else math.nan
        nats_since_eval = 0.0
        chars_since_eval = 0
        history.append((step, bits))
        row = MetricsRow(step, train_nats, bits)
        metrics.append(row)
        improved = bits < best_bits
        if improved:
            best_bits = bits
            best_values = store.copy_values()
            best_step = step
            evals_since_improve = 0
        else:
            evals_since_improve += 1
        if on_eval is not None:
            on_eval(row)
        return improved

    step = 0
    try:
        while step < config.steps:
            step += 1
            batch = pool.sample_batch(rng, config.batch_size)
            tape = Tape()
            lang_ids = np.array([example.lang_id for example in batch], dtype=np.intp)
            segs = batch_lang_segs_from_ids(tape, store, model_config, lang_ids)
            total, chars = batch_nll(tape, store, model_config,
                                     [example.ids for example in batch], segs)
            batch_nats = total.item()
            if not math.isfinite(batch_nats):
                raise DivergenceError(f"non-finite loss at step {step}")
            nats_since_eval += batch_nats
            chars_since_eval += chars
            mean_loss = scale(tape, total, 1.0 / chars)
            tape.backward(mean_loss)
            if config.grad_clip > 0:
                store.clip_grads(config.grad_clip)
            adam_step(store, opt)

            if step % config.eval_every == 0:
                run_eval(step)
                if config.patience > 0 and evals_since_improve >= config.patience:
                    stopped_early = True
                    break
        if not stopped_early and (not history or history[-1][0] != step):
            run_eval(step)
    except DivergenceError as err:
        if best_values is None:
            best_values = store.copy_values()  # nothing evaluated yet; keep init-state params
            best_step = 0
        err.result = TrainResult(snapshot(best_values, best_step), metrics, step, stopped_early)
        raise

    return TrainResult(snapshot(best_values, best_step), metrics, step, stopped_early)
