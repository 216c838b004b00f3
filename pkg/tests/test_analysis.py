"""Language-space operations: interpolation, clustering with a brute-force
oracle, tree exports, sampling, and vector estimation."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langvec.analysis import (EstimationConfig, SamplerConfig, cluster,
                              estimate_vector, generate, interpolate,
                              interpolation_curve, sample_ids, score_text,
                              to_newick, tree_from_json, tree_to_json)
from langvec.corpus import BOS_ID, EOS_ID, Vocabulary
from langvec.errors import ConfigError
from langvec.model import (LanguageVector, ModelConfig, init_params,
                           param_shapes)
from langvec.training import Checkpoint

from oracle_cluster import brute_force_cluster, trees_equivalent


def vec(*values, tied=False):
    arr = np.asarray(values, dtype=np.float64)
    if tied:
        return LanguageVector((arr,), tied=True)
    third = len(arr) // 3
    return LanguageVector((arr[:third], arr[third:2 * third], arr[2 * third:]))


class TestInterpolate:
    def test_endpoints_exact(self):
        a, b = vec(0, 2, 4, 1, 3, 5), vec(9, 8, 7, 6, 5, 4)
        np.testing.assert_array_equal(interpolate(a, b, 0.0).full(), a.full())
        np.testing.assert_array_equal(interpolate(a, b, 1.0).full(), b.full())

    def test_midpoint(self):
        a, b = vec(0.0, 2.0, tied=True), vec(2.0, 0.0, tied=True)
        np.testing.assert_array_equal(interpolate(a, b, 0.5).full(), [1.0, 1.0])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            interpolate(vec(1, 2, tied=True), vec(1, 2, 3, tied=True), 0.5)
        with pytest.raises(ConfigError):
            interpolate(vec(1, 2, tied=True), vec(1, 2, 3, 4, 5, 6), 0.5)

    @given(st.floats(0, 1), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25)
    def test_affine_symmetry(self, alpha, seed):
        rng = np.random.default_rng(seed)
        a, b = vec(*rng.normal(size=6)), vec(*rng.normal(size=6))
        forward = interpolate(a, b, alpha).full() + interpolate(b, a, alpha).full()
        np.testing.assert_allclose(forward, a.full() + b.full(), atol=1e-12)


# ---------------------------------------------------------------------------
# Clustering


def worked_example_vectors():
    # pairwise euclidean distances: d(A,B)=1, d(A,C)=4, d(B,C)=4
    return {"A": np.array([0.0, 0.0]), "B": np.array([1.0, 0.0]),
            "C": np.array([0.5, math.sqrt(15.75)])}


class TestCluster:
    def test_hand_run_upgma_example(self):
        tree = cluster(worked_example_vectors(), metric="euclidean", linkage="average")
        assert tree.height == pytest.approx(4.0)
        ab, c = tree.children
        assert c.name == "C"
        assert ab.height == pytest.approx(1.0)
        assert [child.name for child in ab.children] == ["A", "B"]

    def test_two_languages_merge_at_their_distance(self):
        tree = cluster({"aa": np.array([0.0, 0.0]), "bb": np.array([2.0, 0.0])},
                       metric="euclidean")
        assert tree.height == pytest.approx(2.0)
        assert sorted(tree.leaves()) == ["aa", "bb"]

    @pytest.mark.parametrize("metric", ("cosine", "euclidean"))
    @pytest.mark.parametrize("linkage", ("average", "complete", "single"))
    def test_agrees_with_brute_force_oracle(self, metric, linkage):
        rng = np.random.default_rng(hash((metric, linkage)) % 2 ** 31)
        for _ in range(5):
            vectors = {f"l{i:02d}": rng.normal(size=6) for i in range(10)}
            fast = cluster(vectors, metric=metric, linkage=linkage)
            slow = brute_force_cluster(vectors, metric=metric, linkage=linkage)
            assert trees_equivalent(fast, slow)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        vectors = {f"l{i}": rng.normal(size=4) for i in range(7)}
        base = cluster(vectors)
        for perm_seed in range(5):
            order = np.random.default_rng(perm_seed).permutation(list(vectors))
            shuffled = {name: vectors[name] for name in order}
            assert trees_equivalent(base, cluster(shuffled), tol=0.0)

    def test_equidistant_points_break_ties_lexicographically(self):
        # regular simplex: all pairwise distances equal
        eye = np.eye(4)
        tree = cluster({"d": eye[3], "b": eye[1], "c": eye[2], "a": eye[0]},
                       metric="euclidean", linkage="average")
        # ties merge (a,b) first, then c, then d
        assert tree.children[1].name == "d"
        assert tree.children[0].children[1].name == "c"
        assert [n.name for n in tree.children[0].children[0].children] == ["a", "b"]

    def test_average_linkage_heights_non_decreasing(self):
        rng = np.random.default_rng(12)
        vectors = {f"l{i}": rng.normal(size=5) for i in range(9)}
        tree = cluster(vectors, linkage="average")

        def check(node):
            if node.is_leaf:
                return
            for child in node.children:
                assert child.height <= node.height + 1e-12
                check(child)
        check(tree)

    def test_too_few_languages_rejected(self):
        with pytest.raises(ConfigError):
            cluster({"aa": np.ones(3)})

    def test_zero_vector_rejected_for_cosine(self):
        with pytest.raises(ConfigError):
            cluster({"aa": np.zeros(3), "bb": np.ones(3)}, metric="cosine")


class TestTreeExport:
    def test_newick_heights_halved(self):
        tree = cluster(worked_example_vectors(), metric="euclidean")
        assert to_newick(tree) == "((A:0.5,B:0.5):1.5,C:2.0);"

    def test_newick_single_merge(self):
        tree = cluster({"A": np.array([0.0, 0.0]), "B": np.array([2.0, 0.0])},
                       metric="euclidean")
        assert to_newick(tree) == "(A:1.0,B:1.0);"

    def test_json_round_trip(self):
        tree = cluster(worked_example_vectors(), metric="euclidean")
        again = tree_from_json(tree_to_json(tree))
        assert again == tree

    def test_json_keeps_raw_merge_heights(self):
        tree = cluster(worked_example_vectors(), metric="euclidean")
        payload = json.loads(tree_to_json(tree))
        assert payload["height"] == pytest.approx(4.0)


# ---------------------------------------------------------------------------
# Sampling and estimation on a tiny model


@pytest.fixture(scope="module")
def tiny_ckpt():
    vocab = Vocabulary(list("abcdef"), cap=12)
    config = ModelConfig(vocab_size=vocab.size, num_languages=2,
                         char_dim=4, hidden_dim=6, lang_dim=2)
    store = init_params(config, seed=21)
    return Checkpoint(config=config, vocab=vocab, languages=["aaa", "bbb"],
                      params=store.copy_values())


@pytest.fixture(scope="module")
def zero_ckpt():
    vocab = Vocabulary(list("abcdef"), cap=12)
    config = ModelConfig(vocab_size=vocab.size, num_languages=1,
                         char_dim=4, hidden_dim=6, lang_dim=2)
    params = {name: np.zeros(shape, dtype=np.float32)
              for name, shape in param_shapes(config).items()}
    return Checkpoint(config=config, vocab=vocab, languages=["aaa"], params=params)


class TestGenerate:
    def test_greedy_equals_argmax_rollout(self, tiny_ckpt):
        from langvec.model import (RecurrentState, forward_step,
                                   lang_tensors_from_vector)
        from langvec.tensor import Tape
        vector = tiny_ckpt.vector_for("aaa")
        ids = sample_ids(tiny_ckpt, vector, SamplerConfig(temperature=0.0, max_length=12, seed=0))

        store = tiny_ckpt.param_store()
        segs = lang_tensors_from_vector(vector, dtype=store.dtype)
        state = RecurrentState.zeros(tiny_ckpt.config, store.dtype)
        tape = Tape(record=False)
        manual = []
        prev = BOS_ID
        for _ in range(12):
            logits, state = forward_step(tape, store, tiny_ckpt.config, state, prev, segs)
            prev = int(np.argmax(logits.data))
            if prev == EOS_ID:
                break
            manual.append(prev)
        assert ids == manual

    def test_tiny_temperature_matches_greedy(self, tiny_ckpt):
        vector = tiny_ckpt.vector_for("bbb")
        greedy = sample_ids(tiny_ckpt, vector, SamplerConfig(temperature=0.0, max_length=10, seed=1))
        sharp = sample_ids(tiny_ckpt, vector, SamplerConfig(temperature=1e-4, max_length=10, seed=1))
        assert greedy == sharp

    def test_same_seed_same_text(self, tiny_ckpt):
        vector = tiny_ckpt.vector_for("aaa")
        cfg = SamplerConfig(temperature=0.8, max_length=20, seed=7)
        assert generate(tiny_ckpt, vector, cfg) == generate(tiny_ckpt, vector, cfg)

    def test_zero_parameter_model_samples_uniformly(self, zero_ckpt):
        vector = zero_ckpt.vector_for("aaa")
        v = zero_ckpt.config.vocab_size
        draws = 3000
        counts = np.zeros(v)
        for seed in range(draws):
            ids = sample_ids(zero_ckpt, vector, SamplerConfig(temperature=1.0, max_length=1, seed=seed))
            first = ids[0] if ids else EOS_ID
            counts[first] += 1
        p = 1.0 / v
        sigma = math.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) <= 3 * sigma)

    def test_negative_temperature_rejected(self):
        with pytest.raises(ConfigError):
            SamplerConfig(temperature=-0.1)

    def test_lower_temperature_gives_lower_mean_step_entropy(self, tiny_ckpt):
        from langvec.model import RecurrentState, forward_step, lang_tensors_from_vector
        from langvec.tensor import Tape, softmax
        store = tiny_ckpt.param_store()
        segs = lang_tensors_from_vector(tiny_ckpt.vector_for("aaa"), dtype=store.dtype)
        tape = Tape(record=False)

        def mean_entropy(temperature, min_steps=10_000, max_len=25):
            rng = np.random.default_rng(17)
            total, steps = 0.0, 0
            while steps < min_steps:
                state = RecurrentState.zeros(tiny_ckpt.config, store.dtype)
                prev = BOS_ID
                for _ in range(max_len):
                    logits, state = forward_step(tape, store, tiny_ckpt.config,
                                                 state, prev, segs)
                    p = softmax(logits.data, temperature=temperature)
                    total += float(-(p * np.log(np.maximum(p, 1e-300))).sum())
                    steps += 1
                    prev = int(np.searchsorted(np.cumsum(p), rng.random()))
                    prev = min(prev, tiny_ckpt.config.vocab_size - 1)
                    if prev == EOS_ID:
                        break
            return total / steps

        assert mean_entropy(0.5) < mean_entropy(1.0)


class TestScoreTextAndCurve:
    def test_alpha_zero_matches_own_vector_score(self, tiny_ckpt):
        lines = ["abcabc", "fedfed"]
        curve = interpolation_curve(tiny_ckpt, "aaa", "bbb", lines, [0.0, 0.5])
        direct = score_text(tiny_ckpt, tiny_ckpt.vector_for("aaa"), lines)
        assert curve[0][1] == pytest.approx(direct, rel=1e-12)

    def test_grid_shape(self, tiny_ckpt):
        grid = [i / 100 for i in range(101)]
        curve = interpolation_curve(tiny_ckpt, "aaa", "bbb", ["abc"], grid)
        assert len(curve) == 101
        assert [a for a, _ in curve] == sorted(a for a, _ in curve)

    def test_alpha_outside_unit_interval_rejected(self, tiny_ckpt):
        with pytest.raises(ConfigError):
            interpolation_curve(tiny_ckpt, "aaa", "bbb", ["abc"], [1.5])

    def test_empty_text_rejected(self, tiny_ckpt):
        with pytest.raises(ConfigError):
            score_text(tiny_ckpt, tiny_ckpt.vector_for("aaa"), [])


class TestEstimateVector:
    def test_zero_steps_returns_init_unchanged(self, tiny_ckpt):
        init = tiny_ckpt.vector_for("aaa")
        result = estimate_vector(tiny_ckpt, ["abcd", "bcda", "cdab", "dabc"],
                                 EstimationConfig(steps=0, init_language="aaa"))
        np.testing.assert_array_equal(result.vector.full(), init.full())
        assert result.before_bits_per_char == result.after_bits_per_char

    def test_model_parameters_byte_identical_after_estimation(self, tiny_ckpt):
        before = {name: arr.tobytes() for name, arr in tiny_ckpt.params.items()}
        estimate_vector(tiny_ckpt, ["abcdef", "fedcba", "aabbcc", "ddeeff"],
                        EstimationConfig(steps=8, init_language="aaa"))
        for name, arr in tiny_ckpt.params.items():
            assert arr.tobytes() == before[name]

    def test_never_meaningfully_worse_than_init(self, tiny_ckpt):
        sentences = ["abcabcab", "bcabcabc", "cabcabca", "abccbaab"]
        result = estimate_vector(tiny_ckpt, sentences,
                                 EstimationConfig(steps=25, init_language="aaa"))
        assert result.after_bits_per_char <= result.before_bits_per_char + 1e-6

    def test_too_few_sentences_rejected(self, tiny_ckpt):
        with pytest.raises(ConfigError):
            estimate_vector(tiny_ckpt, ["only one"], EstimationConfig(init_language="aaa"))

    def test_requires_an_init(self, tiny_ckpt):
        with pytest.raises(ConfigError):
            estimate_vector(tiny_ckpt, ["ab", "cd"], EstimationConfig())
