"""Two-layer layer-normalized character LSTM conditioned on language vectors.

The language vector has three segments, concatenated to the input of
each LSTM layer and to the hidden state feeding the pre-softmax layer,
so the predictive distribution over the next character is a continuous
function of the vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .corpus import BOS_ID, EOS_ID
from .errors import ConfigError
from .tensor import (LN_EPS, ParamStore, Tape, Tensor, add, concat,
                     embedding_lookup, matmul, softmax_xent, tanh)

# Gate order inside the fused 4H pre-activation block.
GATES = ("input", "forget", "candidate", "output")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_languages: int
    char_dim: int = 32
    hidden_dim: int = 64
    lang_dim: int = 8
    head_dim: int | None = None  # defaults to hidden_dim
    tied_lang_embedding: bool = False

    def __post_init__(self):
        dims = {
            "vocab_size": self.vocab_size,
            "num_languages": self.num_languages,
            "char_dim": self.char_dim,
            "hidden_dim": self.hidden_dim,
            "lang_dim": self.lang_dim,
            "head_dim": self.head,
        }
        for name, value in dims.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")

    @property
    def head(self) -> int:
        return self.head_dim if self.head_dim is not None else self.hidden_dim

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "num_languages": self.num_languages,
            "char_dim": self.char_dim,
            "hidden_dim": self.hidden_dim,
            "lang_dim": self.lang_dim,
            "head_dim": self.head_dim,
            "tied_lang_embedding": self.tied_lang_embedding,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Shapes of every trainable parameter, keyed by its stable name."""
    v, e, h, l = config.vocab_size, config.char_dim, config.hidden_dim, config.lang_dim
    d = config.head
    shapes: dict[str, tuple[int, ...]] = {"char_embed": (v, e)}
    if config.tied_lang_embedding:
        shapes["lang_embed"] = (config.num_languages, l)
    else:
        for k in (1, 2, 3):
            shapes[f"lang_embed_{k}"] = (config.num_languages, l)
    for layer, nin in ((1, e + l), (2, h + l)):
        shapes[f"lstm{layer}.w_x"] = (nin, 4 * h)
        shapes[f"lstm{layer}.w_h"] = (h, 4 * h)
        shapes[f"lstm{layer}.bias"] = (4 * h,)
        shapes[f"lstm{layer}.ln_x_gain"] = (4 * h,)
        shapes[f"lstm{layer}.ln_h_gain"] = (4 * h,)
        shapes[f"lstm{layer}.ln_c_gain"] = (h,)
        shapes[f"lstm{layer}.ln_c_bias"] = (h,)
    shapes["head.w"] = (h + l, d)
    shapes["head.bias"] = (d,)
    shapes["out.w"] = (d, v)
    shapes["out.bias"] = (v,)
    return shapes


def parameter_counts(config: ModelConfig) -> tuple[int, int]:
    """(total parameter count, LSTM-only parameter count), from shapes alone."""
    shapes = param_shapes(config)
    total = sum(int(np.prod(s)) for s in shapes.values())
    lstm = sum(int(np.prod(s)) for name, s in shapes.items() if name.startswith("lstm"))
    return total, lstm


def init_params(config: ModelConfig, seed, dtype=np.float32) -> ParamStore:
    """Fresh parameters: Glorot-uniform matrices, zero biases except a +1
    forget-gate bias, unit layer-norm gains, N(0, 0.1) embeddings."""
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    h = config.hidden_dim
    for name, shape in param_shapes(config).items():
        if "embed" in name:
            values = rng.normal(0.0, 0.1, size=shape)
        elif name.endswith("_gain"):
            values = np.ones(shape)
        elif len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            values = rng.uniform(-limit, limit, size=shape)
        else:
            values = np.zeros(shape)
            if name.endswith(".bias") and name.startswith("lstm"):
                values[h:2 * h] = 1.0
        store.add(name, values)
    return store


@dataclass(frozen=True)
class LstmLayer:
    """The seven tensors of one layer-normalized LSTM layer."""
    w_x: Tensor
    w_h: Tensor
    bias: Tensor
    ln_x_gain: Tensor
    ln_h_gain: Tensor
    ln_c_gain: Tensor
    ln_c_bias: Tensor

    @staticmethod
    def from_store(store: ParamStore, layer: int) -> "LstmLayer":
        p = f"lstm{layer}."
        return LstmLayer(store[p + "w_x"], store[p + "w_h"], store[p + "bias"],
                         store[p + "ln_x_gain"], store[p + "ln_h_gain"],
                         store[p + "ln_c_gain"], store[p + "ln_c_bias"])


def lstm_cell(tape: Tape, x: Tensor, h: Tensor, c: Tensor, layer: LstmLayer) -> tuple[Tensor, Tensor]:
    """One recurrent step through the selected kernel backend."""
    h_new_d, c_new_d, cache = kernels.lstm_cell_forward(
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
            grads = kernels.lstm_cell_backward(
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


@dataclass
class LanguageVector:
    """Per-language conditioning vector in up to three segments.

    Untied models keep one segment per injection point (full dimension
    3L); tied models share a single segment (full dimension L).
    """
    segments: tuple[np.ndarray, ...]
    tied: bool = False

    def __post_init__(self):
        want = 1 if self.tied else 3
        if len(self.segments) != want:
            raise ConfigError(f"expected {want} segments, got {len(self.segments)}")
        dims = {s.shape for s in self.segments}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ConfigError(f"segments must be 1-D vectors of equal dim, got {dims}")

    def seg(self, k: int) -> np.ndarray:
        return self.segments[0] if self.tied else self.segments[k]

    @property
    def dim(self) -> int:
        return self.segments[0].shape[0]

    def full(self) -> np.ndarray:
        if self.tied:
            return self.segments[0].copy()
        return np.concatenate(self.segments)

    @staticmethod
    def from_full(vec: np.ndarray, tied: bool, lang_dim: int) -> "LanguageVector":
        vec = np.asarray(vec)
        if tied:
            if vec.shape != (lang_dim,):
                raise ConfigError(f"tied vector must have dim {lang_dim}, got {vec.shape}")
            return LanguageVector((vec.copy(),), tied=True)
        if vec.shape != (3 * lang_dim,):
            raise ConfigError(f"full vector must have dim {3 * lang_dim}, got {vec.shape}")
        return LanguageVector(tuple(vec[k * lang_dim:(k + 1) * lang_dim].copy() for k in range(3)), tied=False)


def language_vector(params, config: ModelConfig, lang_id: int) -> LanguageVector:
    """Extract one language's vector from a ParamStore or a name->array map."""
    def row(name):
        table = params[name]
        arr = table.data if isinstance(table, Tensor) else table
        return np.array(arr[lang_id], dtype=np.float64)
    if config.tied_lang_embedding:
        return LanguageVector((row("lang_embed"),), tied=True)
    return LanguageVector(tuple(row(f"lang_embed_{k}") for k in (1, 2, 3)), tied=False)


def lang_tensors_from_vector(vec: LanguageVector, dtype=np.float32) -> tuple[Tensor, Tensor, Tensor]:
    """Constant segment tensors for scoring/generation at an arbitrary point."""
    if vec.tied:
        t = Tensor(vec.segments[0], dtype=dtype)
        return (t, t, t)
    return tuple(Tensor(s, dtype=dtype) for s in vec.segments)


def lang_tensors_from_id(tape: Tape, store: ParamStore, config: ModelConfig,
                         lang_id: int) -> tuple[Tensor, Tensor, Tensor]:
    """Differentiable segment lookups for training (gradients reach the tables)."""
    if config.tied_lang_embedding:
        t = embedding_lookup(tape, store["lang_embed"], lang_id)
        return (t, t, t)
    return tuple(embedding_lookup(tape, store[f"lang_embed_{k}"], lang_id) for k in (1, 2, 3))


@dataclass
class RecurrentState:
    """Hidden and cell vectors of both layers; zero at sequence start."""
    layers: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    @staticmethod
    def zeros(config: ModelConfig, dtype=np.float32) -> "RecurrentState":
        h = config.hidden_dim
        return RecurrentState([
            (Tensor(np.zeros(h, dtype=dtype)), Tensor(np.zeros(h, dtype=dtype)))
            for _ in range(2)
        ])


def forward_step(tape: Tape, store: ParamStore, config: ModelConfig,
                 state: RecurrentState, char_id: int,
                 lang: tuple[Tensor, Tensor, Tensor]) -> tuple[Tensor, RecurrentState]:
    """One prediction step: returns next-character logits and the new state."""
    emb = embedding_lookup(tape, store["char_embed"], char_id)
    x1 = concat(tape, emb, lang[0])
    h1, c1 = lstm_cell(tape, x1, state.layers[0][0], state.layers[0][1], LstmLayer.from_store(store, 1))
    x2 = concat(tape, h1, lang[1])
    h2, c2 = lstm_cell(tape, x2, state.layers[1][0], state.layers[1][1], LstmLayer.from_store(store, 2))
    z = concat(tape, h2, lang[2])
    hidden = tanh(tape, add(tape, matmul(tape, z, store["head.w"]), store["head.bias"]))
    logits = add(tape, matmul(tape, hidden, store["out.w"]), store["out.bias"])
    return logits, RecurrentState([(h1, c1), (h2, c2)])


def sequence_nll(tape: Tape, store: ParamStore, config: ModelConfig,
                 ids, lang: tuple[Tensor, Tensor, Tensor]) -> tuple[Tensor, int]:
    """Teacher-forced negative log-likelihood of a BOS...EOS sequence.

    Returns the summed loss in nats (a float64 scalar tensor) and the
    number of predicted characters, len(ids) - 1.  The BOS symbol is
    conditioned on but never predicted; EOS is predicted.
    """
    ids = np.asarray(ids)
    if len(ids) < 2 or ids[0] != BOS_ID or ids[-1] != EOS_ID:
        raise ValueError("token sequence must be [BOS, ..., EOS] with length >= 2")
    state = RecurrentState.zeros(config, dtype=store.dtype)
    total = None
    for t in range(1, len(ids)):
        logits, state = forward_step(tape, store, config, state, int(ids[t - 1]), lang)
        step_loss = softmax_xent(tape, logits, int(ids[t]))
        total = step_loss if total is None else add(tape, total, step_loss)
    return total, len(ids) - 1


def score_sequences(store: ParamStore, config: ModelConfig, sequences,
                    lang: tuple[Tensor, Tensor, Tensor]) -> tuple[float, int]:
    """Total nats and character count over encoded sequences, without recording."""
    tape = Tape(record=False)
    nats = 0.0
    chars = 0
    for ids in sequences:
        loss, n = sequence_nll(tape, store, config, ids, lang)
        nats += loss.item()
        chars += n
    return nats, chars
