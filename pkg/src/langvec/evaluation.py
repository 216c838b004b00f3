"""Held-out cross-entropy reports and the capacity/shrink experiment harnesses.

Experiments emit CSV rows (header mandatory, ``.`` decimal separator,
LF line endings); plotting is out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .batched import score_sequences_batched
from .corpus import (DEFAULT_VOCAB_CAP, SplitSpec, VerseCorpus, build_vocabulary,
                     encode_sequence, split_train_test)
from .errors import ConfigError
from .model import ModelConfig, lang_tensors_from_vector
from .training import Checkpoint, TrainConfig, train

LN2 = math.log(2.0)

EVAL_HEADER = "language,heldout_chars,nats_per_char,bits_per_char"
CAPACITY_HEADER = "num_languages,language,heldout_bits_per_char"
SHRINK_HEADER = "hidden_size,total_params,lstm_params,heldout_bits_per_char"


def format_csv_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(fh, header: str, rows):
    """Write rows of tuples under a fixed header with LF endings."""
    fh.write(header + "\n")
    for row in rows:
        fh.write(",".join(format_csv_value(v) for v in row) + "\n")


@dataclass(frozen=True)
class LanguageEval:
    language: str
    heldout_chars: int
    nats_per_char: float

    @property
    def bits_per_char(self) -> float:
        return self.nats_per_char / LN2


@dataclass
class EvalReport:
    rows: list[LanguageEval]

    @property
    def mean_nats_per_char(self) -> float:
        return sum(r.nats_per_char for r in self.rows) / len(self.rows)

    @property
    def mean_bits_per_char(self) -> float:
        return self.mean_nats_per_char / LN2

    def csv_rows(self):
        return [(r.language, r.heldout_chars, r.nats_per_char, r.bits_per_char)
                for r in self.rows]


def evaluate(ckpt: Checkpoint, corpus: VerseCorpus, split: SplitSpec,
             languages=None) -> EvalReport:
    """Per-language held-out cross-entropy under the checkpointed model."""
    if languages is None:
        languages = [lang for lang in ckpt.languages if lang in set(corpus.languages)]
    store = ckpt.param_store()
    rows = []
    for lang in languages:
        vector = ckpt.vector_for(lang)
        verse_ids = split.heldout_for(corpus, lang)
        if not verse_ids:
            raise ConfigError(f"language {lang!r} has no held-out verses in this corpus")
        seqs = [encode_sequence(ckpt.vocab, corpus.texts[(lang, vid)]) for vid in verse_ids]
        segs = lang_tensors_from_vector(vector, dtype=store.dtype)
        nats, chars = score_sequences_batched(store, ckpt.config, seqs, segs)
        rows.append(LanguageEval(lang, chars, nats / chars))
    return EvalReport(rows)


@dataclass(frozen=True)
class ModelDims:
    """Model dimensions that do not depend on corpus or language count."""
    char_dim: int = 32
    hidden_dim: int = 64
    lang_dim: int = 8
    head_dim: int | None = None
    tied_lang_embedding: bool = False

    def config(self, vocab_size: int, num_languages: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, num_languages=num_languages,
                           char_dim=self.char_dim, hidden_dim=self.hidden_dim,
                           lang_dim=self.lang_dim, head_dim=self.head_dim,
                           tied_lang_embedding=self.tied_lang_embedding)


def _derived_seed(master: int, key: int) -> int:
    return int(np.random.SeedSequence([master, key]).generate_state(1)[0])


@dataclass
class CapacityPlan:
    """Growth schedule: retrain from scratch on the first k languages per run."""
    languages: list[str]
    schedule: list[int]
    train_config: TrainConfig
    dims: ModelDims = field(default_factory=ModelDims)
    order_mode: str = "given"   # 'given' keeps the list order, 'random' shuffles by seed
    seed: int = 0
    vocab_cap: int = DEFAULT_VOCAB_CAP
    holdout_size: int = 16

    def __post_init__(self):
        if self.order_mode not in ("given", "random"):
            raise ConfigError(f"order mode must be 'given' or 'random', got {self.order_mode!r}")
        if self.order_mode == "random":
            order = np.random.default_rng(self.seed).permutation(len(self.languages))
            self.languages = [self.languages[i] for i in order]
            self.order_mode = "given"  # normalized; re-validation keeps the order
        if len(set(self.languages)) != len(self.languages):
            raise ConfigError("capacity plan languages must be distinct")
        if any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ConfigError(f"schedule must be strictly increasing, got {self.schedule}")
        if not self.schedule or self.schedule[0] < 1 or self.schedule[-1] > len(self.languages):
            raise ConfigError(
                f"schedule {self.schedule} must stay within 1..{len(self.languages)} languages")


def capacity_experiment(corpus: VerseCorpus, plan: CapacityPlan):
    """Yield ``(num_languages, language, heldout_bits_per_char)`` rows.

    Each run trains from scratch on the first k languages of the plan
    order with a seed derived from (plan seed, k), then reports every
    language present in that run.  Languages not yet added emit no row.
    """
    for k in plan.schedule:
        chosen = plan.languages[:k]
        sub = corpus.restrict(chosen)
        vocab = build_vocabulary(sub, plan.vocab_cap)
        split = split_train_test(sub, plan.holdout_size)
        config = plan.dims.config(vocab.size, k)
        tc = replace(plan.train_config, seed=_derived_seed(plan.seed, k))
        result = train(sub, split, vocab, config, tc)
        report = evaluate(result.checkpoint, sub, split, languages=chosen)
        by_lang = {r.language: r for r in report.rows}
        for lang in chosen:
            yield (k, lang, by_lang[lang].bits_per_char)


def run_capacity(corpus: VerseCorpus, plan: CapacityPlan) -> list[tuple]:
    """Run the full plan and validate the row-count schema."""
    rows = list(capacity_experiment(corpus, plan))
    expected = sum(plan.schedule)
    if len(rows) != expected:
        raise ConfigError(f"capacity schema violated: {len(rows)} rows, expected {expected}")
    return rows


@dataclass
class ShrinkPlan:
    """Monolingual runs with the hidden state halved between runs."""
    language: str
    hidden_sizes: list[int]
    train_config: TrainConfig
    dims: ModelDims = field(default_factory=ModelDims)
    seed: int = 0
    vocab_cap: int = DEFAULT_VOCAB_CAP
    holdout_size: int = 16

    def __post_init__(self):
        if not self.hidden_sizes:
            raise ConfigError("shrink plan needs at least one hidden size")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden sizes must be >= 1, got {self.hidden_sizes}")
        if any(b >= a for a, b in zip(self.hidden_sizes, self.hidden_sizes[1:])):
            raise ConfigError(f"hidden sizes must be strictly decreasing, got {self.hidden_sizes}")

    @staticmethod
    def halving(base: int, runs: int) -> list[int]:
        sizes = [max(1, base >> i) for i in range(runs)]
        return sorted(set(sizes), reverse=True)


def shrink_experiment(corpus: VerseCorpus, plan: ShrinkPlan):
    """Yield ``(hidden_size, total_params, lstm_params, heldout_bits_per_char)`` rows."""
    from .model import parameter_counts

    sub = corpus.restrict([plan.language])
    vocab = build_vocabulary(sub, plan.vocab_cap)
    split = split_train_test(sub, plan.holdout_size)
    for h in plan.hidden_sizes:
        dims = replace(plan.dims, hidden_dim=h, head_dim=None)
        config = dims.config(vocab.size, 1)
        total, lstm = parameter_counts(config)
        tc = replace(plan.train_config, seed=_derived_seed(plan.seed, h))
        result = train(sub, split, vocab, config, tc)
        report = evaluate(result.checkpoint, sub, split, languages=[plan.language])
        yield (h, total, lstm, report.rows[0].bits_per_char)


def run_shrink(corpus: VerseCorpus, plan: ShrinkPlan) -> list[tuple]:
    rows = list(shrink_experiment(corpus, plan))
    if len(rows) != len(plan.hidden_sizes):
        raise ConfigError(
            f"shrink schema violated: {len(rows)} rows, expected {len(plan.hidden_sizes)}")
    return rows
