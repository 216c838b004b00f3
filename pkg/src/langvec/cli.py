"""Command-line entry point.

Subcommands: train, eval, sample, interpolate, cluster, estimate,
capacity, shrink.  Exit codes: 0 success, 1 usage error, 2 data/model
error.  Configuration comes from a flat ``key = value`` file plus
repeatable ``--set key=value`` overrides; the merged result is echoed
into every output directory as ``effective-config.txt``.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path

from . import analysis, evaluation, kernels
from .corpus import build_vocabulary, load_corpus, split_train_test
from .errors import ConfigError, DivergenceError, LangvecError
from .evaluation import (CAPACITY_HEADER, EVAL_HEADER, SHRINK_HEADER,
                         CapacityPlan, ModelDims, ShrinkPlan, write_csv)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.csv"
EFFECTIVE_CONFIG_NAME = "effective-config.txt"


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    raise ValueError(f"expected true/false, got {text!r}")


def _parse_optional_int(text: str):
    if text.lower() == "none":
        return None
    return int(text)


# key -> (parser, default)
CONFIG_SPEC = {
    "vocab_cap": (int, 1000),
    "char_dim": (int, 32),
    "hidden_dim": (int, 64),
    "lang_dim": (int, 8),
    "head_dim": (_parse_optional_int, None),
    "tied_lang_embedding": (_parse_bool, False),
    "steps": (int, 1000),
    "batch_size": (int, 16),
    "eval_every": (int, 100),
    "patience": (int, 0),
    "learning_rate": (float, 1e-3),
    "grad_clip": (float, 5.0),
    "max_seq_len": (int, 512),
    "holdout_size": (int, 128),
    "precision": (str, "f32"),
}


def parse_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in CONFIG_SPEC:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        parser, _ = CONFIG_SPEC[key]
        try:
            values[key] = parser(value)
        except ValueError as err:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {err}") from None
    return values


def resolve_config(path, overrides) -> dict:
    cfg = {key: default for key, (_, default) in CONFIG_SPEC.items()}
    if path:
        cfg.update(parse_config_file(path))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = (part.strip() for part in item.partition("="))
        if key not in CONFIG_SPEC:
            raise ConfigError(f"--set: unknown key {key!r}")
        parser, _ = CONFIG_SPEC[key]
        try:
            cfg[key] = parser(value)
        except ValueError as err:
            raise ConfigError(f"--set: bad value for {key}: {err}") from None
    return cfg


def effective_config_text(cfg: dict) -> str:
    lines = [f"{key} = {'none' if cfg[key] is None else cfg[key]}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def _model_dims(cfg: dict) -> ModelDims:
    return ModelDims(char_dim=cfg["char_dim"], hidden_dim=cfg["hidden_dim"],
                     lang_dim=cfg["lang_dim"], head_dim=cfg["head_dim"],
                     tied_lang_embedding=cfg["tied_lang_embedding"])


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(steps=cfg["steps"], batch_size=cfg["batch_size"],
                       eval_every=cfg["eval_every"], patience=cfg["patience"],
                       seed=seed, learning_rate=cfg["learning_rate"],
                       grad_clip=cfg["grad_clip"], max_seq_len=cfg["max_seq_len"],
                       precision=cfg["precision"])


@contextmanager
def out_stream(path):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _prepare_out_dir(path, cfg: dict) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / EFFECTIVE_CONFIG_NAME).write_text(effective_config_text(cfg), encoding="utf-8")
    return out


def _read_lines(path) -> list[str]:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
    if not lines:
        raise ConfigError(f"{path}: no non-empty lines")
    return lines


def parse_grid(spec: str) -> list[float]:
    """'start:end:step' with inclusive endpoints (1e-12 tolerance at the end)."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid must be start:end:step, got {spec!r}")
    try:
        start, end, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid must be numeric, got {spec!r}") from None
    if step <= 0 or end < start:
        raise ConfigError(f"grid needs end >= start and step > 0, got {spec!r}")
    values = []
    i = 0
    while True:
        v = start + i * step
        if v > end + 1e-12:
            break
        values.append(min(v, end))
        i += 1
    return values


def _parse_int_list(spec: str, flag: str) -> list[int]:
    try:
        return [int(p) for p in spec.split(",") if p]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated integers, got {spec!r}") from None


# ---------------------------------------------------------------------------
# Subcommands


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set)
    corpus = load_corpus(args.corpus)
    vocab = build_vocabulary(corpus, cfg["vocab_cap"])
    split = split_train_test(corpus, cfg["holdout_size"])
    model_config = _model_dims(cfg).config(vocab.size, len(corpus.languages))
    train_config = _train_config(cfg, args.seed)
    out = _prepare_out_dir(args.out, cfg)

    print(f"training on {len(corpus.languages)} languages, vocab {vocab.size}, "
          f"kernel backend {kernels.backend_name()}")
    try:
        result = train(corpus, split, vocab, model_config, train_config)
    except DivergenceError as err:
        if err.result is not None:
            save_checkpoint(err.result.checkpoint, out / CHECKPOINT_NAME)
            (out / METRICS_NAME).write_text(err.result.metrics_csv(), encoding="utf-8")
        raise
    save_checkpoint(result.checkpoint, out / CHECKPOINT_NAME)
    (out / METRICS_NAME).write_text(result.metrics_csv(), encoding="utf-8")
    for row in result.metrics:
        print(f"step {row.step}: train {row.train_nats_per_char:.4f} nats/char, "
              f"held-out {row.heldout_bits_per_char:.4f} bits/char")
    print(f"best checkpoint from step {result.checkpoint.step} -> {out / CHECKPOINT_NAME}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args.config, args.set)
    ckpt = load_checkpoint(args.model)
    corpus = load_corpus(args.corpus)
    split = split_train_test(corpus, cfg["holdout_size"])
    languages = args.languages.split(",") if args.languages else None
    report = evaluation.evaluate(ckpt, corpus, split, languages=languages)
    with out_stream(args.out) as fh:
        write_csv(fh, EVAL_HEADER, report.csv_rows())
    print(f"mean held-out cross-entropy: {report.mean_bits_per_char:.4f} bits/char "
          f"({report.mean_nats_per_char:.4f} nats/char)", file=sys.stderr)
    return 0


def _resolve_vector(ckpt, args):
    vector = ckpt.vector_for(args.lang)
    if args.mix_with is not None:
        vector = analysis.interpolate(vector, ckpt.vector_for(args.mix_with), args.alpha)
    return vector


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.model)
    vector = _resolve_vector(ckpt, args)
    cfg = analysis.SamplerConfig(temperature=args.temperature,
                                 max_length=args.max_length, seed=args.seed)
    text = analysis.generate(ckpt, vector, cfg)
    with out_stream(args.out) as fh:
        fh.write(text + "\n")
    return 0


def cmd_interpolate(args) -> int:
    ckpt = load_checkpoint(args.model)
    lines = _read_lines(args.test)
    rows = analysis.interpolation_curve(ckpt, args.from_lang, args.to_lang,
                                        lines, parse_grid(args.grid))
    with out_stream(args.out) as fh:
        write_csv(fh, analysis.CURVE_HEADER, rows)
    return 0


def cmd_cluster(args) -> int:
    ckpt = load_checkpoint(args.model)
    vectors = {code: ckpt.vector_for(code).full() for code in ckpt.languages}
    tree = analysis.cluster(vectors, metric=args.metric, linkage=args.linkage)
    with out_stream(args.out) as fh:
        if args.format == "newick":
            fh.write(analysis.to_newick(tree) + "\n")
        else:
            fh.write(analysis.tree_to_json(tree) + "\n")
    return 0


def cmd_estimate(args) -> int:
    ckpt = load_checkpoint(args.model)
    sentences = _read_lines(args.sentences)
    cfg = analysis.EstimationConfig(steps=args.steps, learning_rate=args.lr,
                                    sentence_budget=args.budget,
                                    init_language=args.init)
    result = analysis.estimate_vector(ckpt, sentences, cfg)
    payload = {
        "init_language": args.init,
        "before_bits_per_char": result.before_bits_per_char,
        "after_bits_per_char": result.after_bits_per_char,
        "steps_run": result.steps_run,
        "vector": {
            "tied": result.vector.tied,
            "segments": [seg.tolist() for seg in result.vector.segments],
        },
    }
    with out_stream(args.out) as fh:
        fh.write(json.dumps(payload, indent=2) + "\n")
    print(f"held-out bits/char {result.before_bits_per_char:.4f} -> "
          f"{result.after_bits_per_char:.4f}", file=sys.stderr)
    return 0


def cmd_capacity(args) -> int:
    cfg = resolve_config(args.config, args.set)
    corpus = load_corpus(args.corpus)
    if args.order == "random":
        languages, order_mode = list(corpus.languages), "random"
    else:
        languages, order_mode = _read_lines(args.order), "given"
    plan = CapacityPlan(languages=languages,
                        schedule=_parse_int_list(args.schedule, "--schedule"),
                        train_config=_train_config(cfg, 0),
                        dims=_model_dims(cfg), order_mode=order_mode,
                        seed=args.seed, vocab_cap=cfg["vocab_cap"],
                        holdout_size=cfg["holdout_size"])
    out = _prepare_out_dir(args.out, cfg)
    written = 0
    with open(out / "curve.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CAPACITY_HEADER + "\n")
        for row in evaluation.capacity_experiment(corpus, plan):
            fh.write(",".join(evaluation.format_csv_value(v) for v in row) + "\n")
            fh.flush()
            written += 1
    expected = sum(plan.schedule)
    if written != expected:
        raise ConfigError(f"capacity schema violated: {written} rows, expected {expected}")
    print(f"wrote {written} rows -> {out / 'curve.csv'}")
    return 0


def cmd_shrink(args) -> int:
    cfg = resolve_config(args.config, args.set)
    corpus = load_corpus(args.corpus)
    plan = ShrinkPlan(language=args.language,
                      hidden_sizes=_parse_int_list(args.sizes, "--sizes"),
                      train_config=_train_config(cfg, 0), dims=_model_dims(cfg),
                      seed=args.seed, vocab_cap=cfg["vocab_cap"],
                      holdout_size=cfg["holdout_size"])
    out = _prepare_out_dir(args.out, cfg)
    written = 0
    with open(out / "curve.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SHRINK_HEADER + "\n")
        for row in evaluation.shrink_experiment(corpus, plan):
            fh.write(",".join(evaluation.format_csv_value(v) for v in row) + "\n")
            fh.flush()
            written += 1
    if written != len(plan.hidden_sizes):
        raise ConfigError(
            f"shrink schema violated: {written} rows, expected {len(plan.hidden_sizes)}")
    print(f"wrote {written} rows -> {out / 'curve.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser


class UsageError(Exception):
    def __init__(self, parser, message):
        super().__init__(message)
        self.parser = parser


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(self, message)


def build_parser() -> Parser:
    parser = Parser(prog="langvec",
                    description="Character-level multilingual language model "
                                "conditioned on continuous language vectors.")
    sub = parser.add_subparsers(dest="cmd", parser_class=Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "Train a model on a corpus directory.")
    p.add_argument("--corpus", required=True, help="corpus directory of <lang>[-<tag>].txt files")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", required=True, type=int, help="random seed")

    p = add("eval", cmd_eval, "Held-out cross-entropy per language.")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--languages", help="comma-separated subset (default: all)")
    p.add_argument("--out", required=True, help="CSV path or - for stdout")

    p = add("sample", cmd_sample, "Generate text conditioned on a language vector.")
    p.add_argument("--model", required=True)
    p.add_argument("--lang", required=True, help="language code")
    p.add_argument("--mix-with", help="second language code to interpolate toward")
    p.add_argument("--alpha", type=float, default=0.5, help="interpolation weight for --mix-with")
    p.add_argument("--temperature", type=float, default=0.5, help="sampling temperature; 0 = greedy")
    p.add_argument("--max-length", type=int, default=200)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, help="text path or -")

    p = add("interpolate", cmd_interpolate, "Cross-entropy along a vector interpolation grid.")
    p.add_argument("--model", required=True)
    p.add_argument("--from", dest="from_lang", required=True, metavar="LANG")
    p.add_argument("--to", dest="to_lang", required=True, metavar="LANG")
    p.add_argument("--grid", default="0:1:0.01", help="start:end:step, inclusive")
    p.add_argument("--test", required=True, help="UTF-8 text file, one sequence per line")
    p.add_argument("--out", required=True, help="CSV path or -")

    p = add("cluster", cmd_cluster, "Agglomerative clustering of the learned language vectors.")
    p.add_argument("--model", required=True)
    p.add_argument("--format", choices=("newick", "json"), default="newick")
    p.add_argument("--metric", choices=analysis.METRICS, default="cosine")
    p.add_argument("--linkage", choices=analysis.LINKAGES, default="average")
    p.add_argument("--out", required=True, help="path or -")

    p = add("estimate", cmd_estimate, "Estimate a language vector for unseen text.")
    p.add_argument("--model", required=True)
    p.add_argument("--sentences", required=True, help="UTF-8 file, one sentence per line")
    p.add_argument("--init", required=True, help="language code to start from")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--budget", type=int, default=32, help="max sentences used")
    p.add_argument("--out", required=True, help="JSON path or -")

    p = add("capacity", cmd_capacity, "Cross-entropy as languages are added (retrains per step).")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--schedule", required=True, help="comma-separated language counts, e.g. 1,2,4,8")
    p.add_argument("--order", required=True,
                   help="'random' for a seeded shuffle, or a file with one language per line")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = add("shrink", cmd_shrink, "Cross-entropy as the hidden state is halved (monolingual).")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--language", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated hidden sizes, decreasing")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, help="output directory")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        err.parser.print_help(sys.stderr)
        print(f"\nerror: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # --help
        return int(err.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (LangvecError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
