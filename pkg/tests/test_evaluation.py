"""Evaluation reports and the capacity/shrink harnesses."""

import io
import math

import numpy as np
import pytest

from langvec.corpus import build_vocabulary, load_corpus, split_train_test
from langvec.errors import ConfigError, UnknownLanguageError
from langvec.evaluation import (CAPACITY_HEADER, EVAL_HEADER, SHRINK_HEADER,
                                CapacityPlan, ModelDims, ShrinkPlan, evaluate,
                                run_capacity, run_shrink, write_csv)
from langvec.model import (ModelConfig, init_params, lang_tensors_from_id,
                           param_shapes, parameter_counts, score_sequences)
from langvec.corpus import encode_sequence
from langvec.tensor import Tape
from langvec.training import Checkpoint, TrainConfig


def write(directory, name, lines):
    (directory / name).write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture
def setup(tmp_path):
    rng = np.random.default_rng(0)
    for lang, alphabet in (("aaa", "abcde "), ("bbb", "vwxyz ")):
        lines = [f"v{v:02d}\t" + "".join(rng.choice(list(alphabet)) for _ in range(18))
                 for v in range(20)]
        write(tmp_path, f"{lang}.txt", lines)
    corpus = load_corpus(tmp_path)
    vocab = build_vocabulary(corpus, 64)
    split = split_train_test(corpus, 4)
    return corpus, vocab, split


def zero_checkpoint(vocab, languages, **dims):
    config = ModelConfig(vocab_size=vocab.size, num_languages=len(languages),
                         char_dim=dims.get("char_dim", 4),
                         hidden_dim=dims.get("hidden_dim", 6),
                         lang_dim=dims.get("lang_dim", 2))
    params = {name: np.zeros(shape, dtype=np.float32)
              for name, shape in param_shapes(config).items()}
    return Checkpoint(config=config, vocab=vocab, languages=list(languages), params=params)


def trained_checkpoint(vocab, languages, seed=0):
    config = ModelConfig(vocab_size=vocab.size, num_languages=len(languages),
                         char_dim=4, hidden_dim=6, lang_dim=2)
    store = init_params(config, seed=seed)
    return Checkpoint(config=config, vocab=vocab, languages=list(languages),
                      params=store.copy_values())


class TestEvaluate:
    def test_zero_parameter_model_scores_exactly_log2_vocab(self, setup):
        corpus, vocab, split = setup
        ckpt = zero_checkpoint(vocab, corpus.languages)
        report = evaluate(ckpt, corpus, split)
        for row in report.rows:
            assert row.bits_per_char == pytest.approx(math.log2(vocab.size), abs=1e-9)

    def test_bits_are_nats_over_ln2(self, setup):
        corpus, vocab, split = setup
        report = evaluate(trained_checkpoint(vocab, corpus.languages), corpus, split)
        for row in report.rows:
            assert row.bits_per_char == pytest.approx(row.nats_per_char / math.log(2), rel=1e-15)
        assert report.mean_bits_per_char == pytest.approx(
            report.mean_nats_per_char / math.log(2), rel=1e-15)

    def test_batched_evaluation_matches_stepwise(self, setup):
        corpus, vocab, split = setup
        ckpt = trained_checkpoint(vocab, corpus.languages, seed=3)
        report = evaluate(ckpt, corpus, split)
        store = ckpt.param_store()
        for lang_id, row in enumerate(report.rows):
            seqs = [encode_sequence(vocab, corpus.texts[(row.language, vid)])
                    for vid in split.heldout_for(corpus, row.language)]
            segs = lang_tensors_from_id(Tape(record=False), store, ckpt.config, lang_id)
            nats, chars = score_sequences(store, ckpt.config, seqs, segs)
            assert row.nats_per_char == pytest.approx(nats / chars, abs=1e-6)
            assert row.heldout_chars == chars

    def test_unknown_language_lists_known_codes(self, setup):
        corpus, vocab, split = setup
        ckpt = trained_checkpoint(vocab, corpus.languages)
        with pytest.raises(UnknownLanguageError, match="aaa.*bbb"):
            evaluate(ckpt, corpus, split, languages=["zzz"])

    def test_report_invariant_under_verse_ordering(self, setup):
        corpus, vocab, split = setup
        ckpt = trained_checkpoint(vocab, corpus.languages, seed=5)
        shuffled = dict(reversed(list(corpus.texts.items())))
        reordered = type(corpus)(shuffled, corpus.provenance)
        one = evaluate(ckpt, corpus, split)
        two = evaluate(ckpt, reordered, split)
        for a, b in zip(one.rows, two.rows):
            assert a.nats_per_char == pytest.approx(b.nats_per_char, rel=1e-12)


class TestCsv:
    def test_headers_and_formatting(self):
        buf = io.StringIO()
        write_csv(buf, EVAL_HEADER, [("aaa", 10, 1.5, 2.164)])
        text = buf.getvalue()
        assert text.startswith("language,heldout_chars,nats_per_char,bits_per_char\n")
        assert "\r" not in text
        assert text.splitlines()[1] == "aaa,10,1.5,2.164"
        assert CAPACITY_HEADER == "num_languages,language,heldout_bits_per_char"
        assert SHRINK_HEADER == "hidden_size,total_params,lstm_params,heldout_bits_per_char"


@pytest.fixture
def family_dir(tmp_path):
    rng = np.random.default_rng(1)
    for i, lang in enumerate(("aaa", "bbb", "ccc", "ddd")):
        alphabet = "abcdefgh "[i:i + 5]
        lines = [f"v{v:02d}\t" + "".join(rng.choice(list(alphabet)) for _ in range(15))
                 for v in range(14)]
        write(tmp_path, f"{lang}.txt", lines)
    return tmp_path


def tiny_train_config():
    return TrainConfig(steps=8, batch_size=4, eval_every=8, seed=0, learning_rate=2e-3)


def tiny_dims():
    return ModelDims(char_dim=4, hidden_dim=6, lang_dim=2)


class TestCapacity:
    def test_single_run_schedule_emits_one_row(self, family_dir):
        corpus = load_corpus(family_dir)
        plan = CapacityPlan(languages=list(corpus.languages), schedule=[1],
                            train_config=tiny_train_config(), dims=tiny_dims(),
                            holdout_size=3, vocab_cap=64)
        rows = run_capacity(corpus, plan)
        assert len(rows) == 1
        assert rows[0][0] == 1 and rows[0][1] == corpus.languages[0]
        assert math.isfinite(rows[0][2])

    def test_row_count_matches_schedule_sum(self, family_dir):
        corpus = load_corpus(family_dir)
        plan = CapacityPlan(languages=list(corpus.languages), schedule=[1, 2, 4],
                            train_config=tiny_train_config(), dims=tiny_dims(),
                            holdout_size=3, vocab_cap=64)
        rows = run_capacity(corpus, plan)
        assert len(rows) == 1 + 2 + 4
        assert [r[0] for r in rows] == [1, 2, 2, 4, 4, 4, 4]
        # languages not yet added emit no row
        first_run = [r for r in rows if r[0] == 1]
        assert len(first_run) == 1

    def test_random_order_is_seeded_and_reproducible(self, family_dir):
        corpus = load_corpus(family_dir)
        kw = dict(schedule=[1, 2], train_config=tiny_train_config(),
                  dims=tiny_dims(), holdout_size=3, vocab_cap=64)
        one = CapacityPlan(languages=list(corpus.languages), order_mode="random", seed=4, **kw)
        two = CapacityPlan(languages=list(corpus.languages), order_mode="random", seed=4, **kw)
        other = CapacityPlan(languages=list(corpus.languages), order_mode="random", seed=5, **kw)
        assert one.languages == two.languages
        assert one.languages != other.languages or one.seed != other.seed

    def test_schedule_validation(self, family_dir):
        corpus = load_corpus(family_dir)
        kw = dict(train_config=tiny_train_config(), dims=tiny_dims())
        with pytest.raises(ConfigError):
            CapacityPlan(languages=list(corpus.languages), schedule=[2, 2], **kw)
        with pytest.raises(ConfigError):
            CapacityPlan(languages=list(corpus.languages), schedule=[1, 9], **kw)


class TestShrink:
    def test_rows_and_parameter_counts(self, family_dir):
        corpus = load_corpus(family_dir)
        plan = ShrinkPlan(language="aaa", hidden_sizes=[8, 4],
                          train_config=tiny_train_config(), dims=tiny_dims(),
                          holdout_size=3, vocab_cap=64)
        rows = run_shrink(corpus, plan)
        assert len(rows) == 2
        vocab = build_vocabulary(corpus.restrict(["aaa"]), 64)
        for (h, total, lstm, bits) in rows:
            config = ModelConfig(vocab_size=vocab.size, num_languages=1,
                                 char_dim=4, hidden_dim=h, lang_dim=2)
            expect_total, expect_lstm = parameter_counts(config)
            assert (total, lstm) == (expect_total, expect_lstm)
            assert math.isfinite(bits)
        assert rows[0][2] > rows[1][2]  # halving H strictly decreases lstm params

    def test_size_validation(self):
        kw = dict(language="aaa", train_config=tiny_train_config(), dims=tiny_dims())
        with pytest.raises(ConfigError):
            ShrinkPlan(hidden_sizes=[4, 8], **kw)
        with pytest.raises(ConfigError):
            ShrinkPlan(hidden_sizes=[], **kw)
        with pytest.raises(ConfigError):
            ShrinkPlan(hidden_sizes=[4, 0], **kw)

    def test_halving_helper(self):
        assert ShrinkPlan.halving(64, 4) == [64, 32, 16, 8]
        assert ShrinkPlan.halving(4, 4) == [4, 2, 1]
