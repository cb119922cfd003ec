"""Command-line entry point.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, resolve
from .data import ConceptVocab, Dataset, build_dataset, generate_synthetic, load_csv, split, write_csv, write_summary
from .errors import ConfigError, DataError, LrpktError, ModelError, ModelFileError
from .experiments import (
    concept_graph,
    consistency_study,
    deletion_study,
    explain_prefixes,
    export_graph,
    write_consistency,
    write_deletion,
)
from .lrp import explain, explanation_report
from .model import Interaction, InteractionSequence, load_model, save_model
from .training import evaluate, train

log = logging.getLogger("lrpkt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_IO = 0, 2, 3, 4


class UsageError(ConfigError):
    pass


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="TOML run configuration")
    p.add_argument("--output", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed")
    p.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(
        prog="lrpkt", parents=[common],
        description="Train LSTM knowledge-tracing models and explain their predictions with epsilon-LRP.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, parents=[common], help=help, description=help)

    def cfg(p, *flags, dest, type=str, help=None):
        p.add_argument(*flags, dest=f"cfg_{dest}", type=type, default=None, help=help)

    s = add("synth", "write a synthetic BKT interaction log")
    cfg(s, "--num-students", dest="num_students", type=int)
    cfg(s, "--questions-per-student", dest="questions_per_student", type=int)
    cfg(s, "--num-concepts", dest="num_concepts", type=int)
    for name in ("p_init", "p_learn", "p_slip", "p_guess"):
        cfg(s, "--" + name.replace("_", "-"), dest=name, help="one value or a comma list per concept")
    cfg(s, "--latent-skill", dest="latent_skill", help="comma list mapping each concept to a hidden skill")

    t = add("train", "train a model on an interaction log")
    t.add_argument("--data", required=True, help="interaction CSV")
    t.add_argument("--seeds", help="seed sweep, e.g. 1..3 or 1,5,9")
    cfg(t, "--hidden-size", dest="hidden_size", type=int)
    cfg(t, "--iterations", dest="iterations", type=int)
    cfg(t, "--batch-size", dest="batch_size", type=int)
    cfg(t, "--learning-rate", dest="learning_rate", type=float)
    cfg(t, "--dropout", dest="dropout_rate", type=float, help="dropout rate")
    cfg(t, "--train-fraction", dest="train_fraction", type=float)
    cfg(t, "--max-sequence-length", dest="max_sequence_length", type=int)

    e = add("eval", "compute ACC/AUC of a model on an interaction log")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--test-only", action="store_true", help="re-create the train/test split and score the test part")

    x = add("explain", "explain the next-question prediction for one sequence")
    x.add_argument("--model", required=True)
    x.add_argument("--sequence", required=True,
                   help="inline 'skill:correct' list (e.g. '3:1,3:0,7:1') or a CSV path")
    x.add_argument("--learner", help="user_id to take from a CSV sequence file")
    x.add_argument("--target", help="concept to predict (default: concept of the last question)")
    cfg(x, "--epsilon", dest="epsilon", type=float)
    cfg(x, "--delta", dest="delta", type=int)

    ex = add("experiment", "run a validation study")
    ex.add_argument("kind", choices=("consistency", "deletion", "concept-graph"))
    ex.add_argument("--model", required=True)
    ex.add_argument("--data", required=True)
    ex.add_argument("--test-only", action="store_true")
    cfg(ex, "--prefix-len", dest="prefix_len", type=int)
    cfg(ex, "--max-deletions", dest="max_deletions", type=int)
    cfg(ex, "--num-random-repeats", dest="num_random_repeats", type=int)
    cfg(ex, "--false-order", dest="false_order")
    cfg(ex, "--epsilon", dest="epsilon", type=float)
    cfg(ex, "--delta", dest="delta", type=int)
    ex.add_argument("--no-orient", dest="cfg_orient", action="store_const", const=False, default=None,
                    help="keep raw relevance signs for negative predictions")
    return parser


def parse_seeds(spec: str) -> list[int]:
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", spec)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise UsageError(f"empty seed range {spec!r}")
        return list(range(lo, hi + 1))
    try:
        seeds = [int(s) for s in spec.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --seeds value {spec!r}; use 1..3 or 1,2,3") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path):
    params, mcfg, labels = load_model(path, with_labels=True)
    vocab = ConceptVocab(tuple(labels)) if labels is not None else None
    return params, mcfg, vocab


def _model_dataset(path, vocab: ConceptVocab | None, cfg: RunConfig, num_concepts: int) -> Dataset:
    if vocab is None:
        vocab = ConceptVocab(tuple(str(k) for k in range(num_concepts)))
    return build_dataset(load_csv(path), cfg.min_sequence_length, vocab=vocab, multi_skill_sep=cfg.multi_skill_sep)


# --------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg: RunConfig) -> int:
    dataset = generate_synthetic(cfg.bkt_params())
    out = _out_dir(cfg)
    path = out / "synthetic.csv"
    write_csv(dataset.to_records(), path)
    print(f"wrote {dataset.summary()['num_records']} records for {len(dataset)} students to {path}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    seeds = parse_seeds(args.seeds) if args.seeds else None
    dataset = build_dataset(load_csv(args.data), cfg.min_sequence_length, multi_skill_sep=cfg.multi_skill_sep)
    out = _out_dir(cfg)
    write_summary(dataset, out / "dataset_summary.json")
    runs = seeds if seeds is not None else [cfg.seed]
    for seed in runs:
        suffix = "" if seeds is None else f"_seed{seed}"
        train_set, test_set = split(dataset, cfg.train_fraction, seed)
        mcfg = cfg.model_config(dataset.num_concepts, seed)
        params, losses = train(train_set, mcfg, cfg.train_config(seed))
        save_model(params, mcfg, out / f"model{suffix}.json", concept_labels=dataset.vocab.labels)
        with (out / f"train_log{suffix}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("iteration", "loss"))
            w.writerows((k + 1, repr(loss)) for k, loss in enumerate(losses))
        metrics = evaluate(params, test_set)
        _write_json(out / f"metrics{suffix}.json", metrics.to_dict())
        print(f"seed {seed}: ACC {metrics.acc:.4f} AUC {metrics.auc:.4f} on {metrics.num_predictions} test predictions")
    return EXIT_OK


def _maybe_test_split(dataset: Dataset, args, cfg: RunConfig) -> Dataset:
    return split(dataset, cfg.train_fraction, cfg.seed)[1] if args.test_only else dataset


def cmd_eval(args, cfg: RunConfig) -> int:
    params, mcfg, vocab = _load_model(args.model)
    dataset = _maybe_test_split(_model_dataset(args.data, vocab, cfg, mcfg.num_concepts), args, cfg)
    metrics = evaluate(params, dataset)
    _write_json(_out_dir(cfg) / "metrics.json", metrics.to_dict())
    print(f"ACC {metrics.acc:.4f} AUC {metrics.auc:.4f} on {metrics.num_predictions} predictions")
    return EXIT_OK


def parse_inline_sequence(text: str, vocab: ConceptVocab) -> InteractionSequence:
    tokens = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    if not tokens:
        raise UsageError("the sequence is empty")
    steps = []
    for pos, token in enumerate(tokens, start=1):
        skill, sep, correct = token.rpartition(":")
        if not sep or correct not in ("0", "1") or not skill:
            raise UsageError(f"bad sequence item {token!r}; expected skill:0 or skill:1")
        steps.append(Interaction(pos, vocab.index(skill), correct == "1"))
    return InteractionSequence("input", tuple(steps))


def _sequence_from_csv(path, learner, vocab: ConceptVocab, cfg: RunConfig) -> InteractionSequence:
    dataset = build_dataset(load_csv(path), 1, vocab=vocab, multi_skill_sep=cfg.multi_skill_sep, dedup=False)
    seqs = dataset.sequences
    if learner is not None:
        seqs = [s for s in seqs if str(s.learner_id) == learner]
        if not seqs:
            raise DataError(f"learner {learner!r} not found in {path}")
    elif len(seqs) > 1:
        raise UsageError(f"{path} holds {len(seqs)} learners; pick one with --learner")
    return seqs[0]


def cmd_explain(args, cfg: RunConfig) -> int:
    params, mcfg, vocab = _load_model(args.model)
    if vocab is None:
        vocab = ConceptVocab(tuple(str(k) for k in range(mcfg.num_concepts)))
    if Path(args.sequence).is_file():
        seq = _sequence_from_csv(args.sequence, args.learner, vocab, cfg)
    else:
        seq = parse_inline_sequence(args.sequence, vocab)
    target = vocab.index(args.target) if args.target is not None else seq.steps[-1].concept_id
    lrp_cfg = cfg.lrp_config()
    _, rt = explain(params, seq, target, lrp_cfg)
    report = explanation_report(seq, rt, lrp_cfg, concept_labels=vocab.labels)
    _write_json(_out_dir(cfg) / "explanation.json", report)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_experiment(args, cfg: RunConfig) -> int:
    params, mcfg, vocab = _load_model(args.model)
    dataset = _maybe_test_split(_model_dataset(args.data, vocab, cfg, mcfg.num_concepts), args, cfg)
    lrp_cfg = cfg.lrp_config()
    explained, ties = explain_prefixes(params, dataset, cfg.prefix_len, lrp_cfg, cfg.orient)
    if not explained:
        raise DataError(f"no sequence with at least {cfg.prefix_len + 1} interactions")
    out = _out_dir(cfg)
    labels = vocab.labels if vocab is not None else None

    if args.kind == "consistency":
        report = consistency_study(params, dataset, cfg.prefix_len, lrp_cfg, cfg.orient)
        write_consistency(report, out)
        parts = [
            f"{g} median {np.median(report.rates(g)):.3f} (n={n})" if n else f"{g} empty"
            for g, n in report.group_sizes().items()
        ]
        print("consistent rate: " + ", ".join(parts))
    elif args.kind == "deletion":
        curves = deletion_study(
            params, dataset, cfg.prefix_len, cfg.max_deletions, cfg.num_random_repeats, cfg.seed,
            lrp_cfg, cfg.false_order, cfg.orient, explained=explained,
        )
        write_deletion(curves, out / "deletion.csv")
        groups = sorted({c.group for c in curves})
        print(f"deletion curves for {len(groups)} group(s): {', '.join(groups)}")
    else:
        graph = concept_graph(params, dataset, cfg.prefix_len, lrp_cfg, explained=explained)
        export_graph(graph, "dot", out / "concept_graph.dot", labels)
        export_graph(graph, "json", out / "concept_graph.json", labels)
        print(f"concept graph: {len(graph.edges)} edges, {sum(e.argmax for e in graph.edges)} strongest links"
              + (f" ({graph.note})" if graph.note else ""))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", 0) or 0
    logging.basicConfig(
        level=logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    for name in ("seed", "output"):
        if hasattr(args, name):
            overrides[name] = getattr(args, name)
    try:
        cfg = resolve(getattr(args, "config", None), overrides).validate()
        if args.command == "synth":
            cfg.bkt_params()
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"lrpkt: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelError, ModelFileError) as exc:
        print(f"lrpkt: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"lrpkt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LrpktError as exc:
        print(f"lrpkt: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
