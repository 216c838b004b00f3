"""Working with the learned language space: hierarchical clustering of
language vectors, conditioned text generation, interpolation between
languages, and estimating a vector for an unseen variety by optimizing
only that vector against a handful of sentences."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .batched import (batch_lang_segs_from_vector, batch_nll,
                      score_sequences_batched)
from .corpus import BOS_ID, EOS_ID, UNK_CHAR, encode_sequence
from .errors import ConfigError
from .model import (LanguageVector, RecurrentState, forward_step,
                    lang_tensors_from_vector)
from .tensor import ParamStore, Tape, scale, softmax
from .training import AdamState, Checkpoint, adam_step

LN2 = math.log(2.0)

CURVE_HEADER = "alpha,bits_per_char"


def interpolate(a: LanguageVector, b: LanguageVector, alpha: float) -> LanguageVector:
    """Segment-wise linear interpolation; alpha=0 gives a, alpha=1 gives b."""
    if a.tied != b.tied or a.dim != b.dim:
        raise ConfigError(
            f"cannot interpolate between vectors of dim {a.dim} (tied={a.tied}) "
            f"and dim {b.dim} (tied={b.tied})")
    if alpha == 0.0:
        segments = tuple(s.copy() for s in a.segments)
    elif alpha == 1.0:
        segments = tuple(s.copy() for s in b.segments)
    else:
        segments = tuple((1.0 - alpha) * sa + alpha * sb
                         for sa, sb in zip(a.segments, b.segments))
    return LanguageVector(segments, tied=a.tied)


def score_text(ckpt: Checkpoint, vector: LanguageVector, lines) -> float:
    """Bits per character of the given lines under an arbitrary language vector."""
    seqs = [encode_sequence(ckpt.vocab, line) for line in lines]
    if not seqs:
        raise ConfigError("no text to score")
    store = ckpt.param_store()
    segs = lang_tensors_from_vector(vector, dtype=store.dtype)
    nats, chars = score_sequences_batched(store, ckpt.config, seqs, segs)
    return nats / chars / LN2


def interpolation_curve(ckpt: Checkpoint, lang_a: str, lang_b: str,
                        lines, alphas) -> list[tuple[float, float]]:
    """Cross-entropy of the text under interpolate(a, b, alpha) per grid point."""
    va = ckpt.vector_for(lang_a)
    vb = ckpt.vector_for(lang_b)
    rows = []
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"interpolation grid must stay in [0, 1], got {alpha}")
        rows.append((float(alpha), score_text(ckpt, interpolate(va, vb, alpha), lines)))
    return rows


# ---------------------------------------------------------------------------
# Hierarchical agglomerative clustering


@dataclass(frozen=True)
class TreeNode:
    """Dendrogram node; leaves carry a name, internal nodes a merge height."""
    height: float
    name: str | None = None
    children: tuple["TreeNode", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list[str]:
        if self.is_leaf:
            return [self.name]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    @property
    def label(self) -> str:
        """Lexicographically smallest member; the deterministic tie-break key."""
        return self.name if self.is_leaf else min(c.label for c in self.children)


METRICS = ("cosine", "euclidean")
LINKAGES = ("average", "complete", "single")


def _distance_matrix(vectors: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        diff = vectors[:, None, :] - vectors[None, :, :]
        return np.sqrt((diff * diff).sum(axis=-1))
    if metric == "cosine":
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0.0):
            raise ConfigError("cosine distance undefined for a zero vector")
        unit = vectors / norms[:, None]
        return np.clip(1.0 - unit @ unit.T, 0.0, None)
    raise ConfigError(f"metric must be one of {METRICS}, got {metric!r}")


def cluster(vectors: dict[str, np.ndarray], metric: str = "cosine",
            linkage: str = "average") -> TreeNode:
    """Agglomerative merge tree over language vectors.

    Repeatedly merges the closest pair of clusters under the linkage;
    distance ties break on the lexicographically smallest member codes,
    which makes the result independent of input order.
    """
    if linkage not in LINKAGES:
        raise ConfigError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    if len(vectors) < 2:
        raise ConfigError(f"clustering needs at least 2 languages, got {len(vectors)}")
    names = sorted(vectors)
    mat = np.array([np.asarray(vectors[name], dtype=np.float64) for name in names])
    if mat.ndim != 2:
        raise ConfigError("language vectors must share one dimension")
    dist = _distance_matrix(mat, metric)

    nodes: dict[int, TreeNode] = {i: TreeNode(0.0, name=names[i]) for i in range(len(names))}
    labels = {i: names[i] for i in range(len(names))}  # cached smallest member
    sizes = {i: 1 for i in range(len(names))}
    active = sorted(nodes)
    next_id = len(names)
    d = {}
    for i in active:
        for j in active:
            if i < j:
                d[(i, j)] = float(dist[i, j])

    def pair_key(i, j):
        la, lb = sorted((labels[i], labels[j]))
        return (d[(i, j)], la, lb)

    while len(active) > 1:
        i, j = min(((i, j) for i in active for j in active if i < j), key=lambda p: pair_key(*p))
        height = d[(i, j)]
        a, b = sorted((nodes[i], nodes[j]), key=lambda n: n.label)
        merged = TreeNode(height, children=(a, b))
        nid = next_id
        next_id += 1
        for k in active:
            if k in (i, j):
                continue
            dik = d[(min(i, k), max(i, k))]
            djk = d[(min(j, k), max(j, k))]
            if linkage == "average":
                new = (sizes[i] * dik + sizes[j] * djk) / (sizes[i] + sizes[j])
            elif linkage == "complete":
                new = max(dik, djk)
            else:
                new = min(dik, djk)
            d[(min(nid, k), max(nid, k))] = new
        nodes[nid] = merged
        labels[nid] = min(labels[i], labels[j])
        sizes[nid] = sizes[i] + sizes[j]
        active = [k for k in active if k not in (i, j)] + [nid]
        active.sort()
    return nodes[active[0]]


def to_newick(tree: TreeNode) -> str:
    """Newick string with ultrametric branch lengths (node depth = height / 2)."""
    def render(node: TreeNode, parent_depth: float) -> str:
        depth = node.height / 2.0
        length = parent_depth - depth
        if node.is_leaf:
            return f"{node.name}:{float(length)!r}"
        inner = ",".join(render(c, depth) for c in node.children)
        return f"({inner}):{float(length)!r}"

    root_depth = tree.height / 2.0
    if tree.is_leaf:
        return f"{tree.name};"
    inner = ",".join(render(c, root_depth) for c in tree.children)
    return f"({inner});"


def tree_to_json(tree: TreeNode) -> str:
    def as_dict(node: TreeNode):
        if node.is_leaf:
            return {"name": node.name, "height": node.height}
        return {"children": [as_dict(c) for c in node.children], "height": node.height}
    return json.dumps(as_dict(tree), indent=2)


def tree_from_json(text: str) -> TreeNode:
    def from_dict(d) -> TreeNode:
        if "children" in d:
            return TreeNode(float(d["height"]),
                            children=tuple(from_dict(c) for c in d["children"]))
        return TreeNode(float(d["height"]), name=d["name"])
    return from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Text generation


@dataclass
class SamplerConfig:
    temperature: float = 0.5    # 0 selects greedy argmax decoding
    max_length: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_length < 1:
            raise ConfigError(f"max length must be >= 1, got {self.max_length}")


def sample_ids(ckpt: Checkpoint, vector: LanguageVector, cfg: SamplerConfig) -> list[int]:
    """Autoregressive rollout from BOS; returns sampled ids without BOS/EOS."""
    store = ckpt.param_store()
    segs = lang_tensors_from_vector(vector, dtype=store.dtype)
    tape = Tape(record=False)
    state = RecurrentState.zeros(ckpt.config, dtype=store.dtype)
    rng = np.random.default_rng(cfg.seed)
    prev = BOS_ID
    out = []
    while len(out) < cfg.max_length:
        logits, state = forward_step(tape, store, ckpt.config, state, prev, segs)
        if cfg.temperature == 0.0:
            token = int(np.argmax(logits.data))
        else:
            probs = softmax(logits.data, temperature=cfg.temperature)
            token = int(np.searchsorted(np.cumsum(probs), rng.random()))
            token = min(token, ckpt.config.vocab_size - 1)
        if token == EOS_ID:
            break
        out.append(token)
        prev = token
    return out


def generate(ckpt: Checkpoint, vector: LanguageVector, cfg: SamplerConfig) -> str:
    """Sampled text; ids with no character form (BOS/UNK) render as U+FFFD."""
    chars = []
    for token in sample_ids(ckpt, vector, cfg):
        chars.append(UNK_CHAR if token == BOS_ID else ckpt.vocab.decode_char(token))
    return "".join(chars)


# ---------------------------------------------------------------------------
# Language-vector estimation for unseen varieties


@dataclass
class EstimationConfig:
    steps: int = 200
    learning_rate: float = 0.1
    sentence_budget: int = 32
    init_language: str | None = None
    init_vector: LanguageVector | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not math.isfinite(self.learning_rate):
            raise ConfigError("learning rate must be finite")
        if self.sentence_budget < 2:
            raise ConfigError(f"sentence budget must be >= 2, got {self.sentence_budget}")


@dataclass
class EstimationResult:
    vector: LanguageVector
    before_bits_per_char: float
    after_bits_per_char: float
    steps_run: int


def _segment_store(vec: LanguageVector, dtype) -> ParamStore:
    store = ParamStore(dtype)
    if vec.tied:
        store.add("seg", vec.segments[0])
    else:
        for k, seg in enumerate(vec.segments, start=1):
            store.add(f"seg{k}", seg)
    return store


def _store_vector(store: ParamStore, tied: bool) -> LanguageVector:
    if tied:
        return LanguageVector((store["seg"].data.copy(),), tied=True)
    return LanguageVector(tuple(store[f"seg{k}"].data.copy() for k in (1, 2, 3)), tied=False)


def _store_segs(store: ParamStore, tied: bool):
    if tied:
        t = store["seg"]
        return (t, t, t)
    return (store["seg1"], store["seg2"], store["seg3"])


def estimate_vector(ckpt: Checkpoint, sentences, cfg: EstimationConfig) -> EstimationResult:
    """Fit a language vector to sentences with all model parameters frozen.

    The first ~75% of the (budget-capped) sentences drive Adam on the
    vector alone; the rest are an internal holdout reported before and
    after.  When a step fails to improve the fitting loss the step is
    rolled back and the learning rate halved, so the returned vector is
    never meaningfully worse than the initial one.
    """
    sentences = [s for s in sentences if s]
    if len(sentences) < 2:
        raise ConfigError("vector estimation needs at least 2 non-empty sentences")
    sentences = sentences[:cfg.sentence_budget]
    n_fit = min(len(sentences) - 1, max(1, round(0.75 * len(sentences))))
    fit_lines, held_lines = sentences[:n_fit], sentences[n_fit:]

    if cfg.init_vector is not None:
        init = cfg.init_vector
    elif cfg.init_language is not None:
        init = ckpt.vector_for(cfg.init_language)
    else:
        raise ConfigError("estimation needs an init language or an explicit init vector")

    model_store = ckpt.param_store()
    config = ckpt.config
    fit_seqs = [encode_sequence(ckpt.vocab, s) for s in fit_lines]
    held_seqs = [encode_sequence(ckpt.vocab, s) for s in held_lines]

    def holdout_bits(vec: LanguageVector) -> float:
        segs = lang_tensors_from_vector(vec, dtype=model_store.dtype)
        nats, chars = score_sequences_batched(model_store, config, held_seqs, segs)
        return nats / chars / LN2

    before = holdout_bits(init)
    vec_store = _segment_store(init, model_store.dtype)
    opt = AdamState(vec_store, learning_rate=cfg.learning_rate)
    best_fit = math.inf
    best_values = vec_store.copy_values()
    steps_run = 0

    while steps_run < cfg.steps:
        steps_run += 1
        tape = Tape()
        segs = batch_lang_segs_from_vector(tape, _store_segs(vec_store, init.tied),
                                           len(fit_seqs))
        total, chars = batch_nll(tape, model_store, config, fit_seqs, segs)
        fit_nats = total.item() / chars
        if fit_nats < best_fit:
            best_fit = fit_nats
            best_values = vec_store.copy_values()
        elif fit_nats > best_fit and opt.learning_rate > 1e-6:
            # strictly worse than the best point seen: roll back and take
            # smaller steps from there (the rolled-back point re-scores equal
            # to best on the next pass, so optimization always resumes)
            vec_store.load_values(best_values)
            opt = AdamState(vec_store, learning_rate=opt.learning_rate * 0.5)
            vec_store.zero_grads()
            continue
        tape.backward(scale(tape, total, 1.0 / chars))
        adam_step(vec_store, opt)

    vec_store.load_values(best_values)
    fitted = _store_vector(vec_store, init.tied)
    after = holdout_bits(fitted)
    if after <= before:
        return EstimationResult(fitted, before, after, steps_run)
    return EstimationResult(init, before, before, steps_run)
