"""Validation studies built on the relevance scores.

All three studies look at sequences of ``prefix_len + 1`` interactions:
the first ``prefix_len`` are fed to the model and the next one is the
question whose outcome is predicted and explained.

Prediction groups:

* ``positive``/``negative``: predicted probability above/below 0.5
  (exactly 0.5 is excluded and counted separately);
* ``correct_*``/``false_*``: whether that prediction matched the answer.

Relevance is explained from the predicted probability, so for a
negative prediction (negative output logit) the epsilon rule flips every
share: positive relevance then means "supports predicting an incorrect
answer". By default the studies orient each explanation by the sign of
the logit, so that positive relevance always pushes towards a correct
answer. The recursion is linear in the initial relevance, which makes
this identical to explaining the logit up to a positive per-sequence
scale.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError
from .lrp import LrpConfig, lrp_sequence
from .model import InteractionSequence, ModelParams, forward_sequence
from .training import forward_batch, make_batch

log = logging.getLogger(__name__)

NUM_BINS = 10
GROUPS = ("correct_positive", "correct_negative", "false_positive", "false_negative")


@dataclass(frozen=True, eq=False)
class ExplainedPrefix:
    sequence_id: object
    prefix: InteractionSequence
    target_concept: int
    target_correct: bool
    probability: float
    relevances: np.ndarray
    raw_relevances: np.ndarray

    @property
    def prediction(self) -> str:
        return "positive" if self.probability > 0.5 else "negative"

    @property
    def predicted_correctly(self) -> bool:
        return (self.probability > 0.5) == self.target_correct

    @property
    def group(self) -> str:
        return ("correct_" if self.predicted_correctly else "false_") + self.prediction


def explain_prefixes(
    params: ModelParams,
    dataset: Dataset | Sequence[InteractionSequence],
    prefix_len: int,
    config: LrpConfig = LrpConfig(),
    orient: bool = True,
) -> tuple[list[ExplainedPrefix], int]:
    """Predict step ``prefix_len + 1`` of every long-enough sequence and explain it.

    Returns the explained prefixes and the number of excluded p == 0.5 ties.
    With ``orient`` the relevances of negative predictions are negated
    (``raw_relevances`` keeps the unoriented values).
    """
    if prefix_len < 1:
        raise ConfigError("prefix_len must be >= 1")
    seqs = getattr(dataset, "sequences", dataset)
    out, ties = [], 0
    for seq in seqs:
        if len(seq) < prefix_len + 1:
            continue
        prefix = InteractionSequence(seq.learner_id, seq.steps[:prefix_len])
        target = seq.steps[prefix_len]
        trace = forward_sequence(params, prefix)
        p = float(trace.y[-1, target.concept_id])
        if p == 0.5:
            ties += 1
            continue
        raw = lrp_sequence(params, trace, None, target.concept_id, config).question_relevance
        signed = -raw if orient and p < 0.5 else raw
        out.append(ExplainedPrefix(
            seq.learner_id, prefix, target.concept_id, bool(target.correct), p, signed, raw,
        ))
    return out, ties


# --------------------------------------------------------------------------
# consistency

def consistent_count(correct, relevances) -> int:
    correct = np.asarray(correct, dtype=bool)
    r = np.asarray(relevances, dtype=np.float64)
    if correct.shape != r.shape:
        raise DataError(f"{correct.size} answers but {r.size} relevance values")
    return int(np.sum((correct & (r > 0)) | (~correct & (r < 0))))


def consistent_rate(seq_prefix, relevances) -> float:
    """Fraction of questions whose answer agrees in sign with their relevance.

    A correct answer is consistent with positive relevance, an incorrect
    one with negative relevance; zero relevance is never consistent.
    ``seq_prefix`` is an :class:`InteractionSequence` or a list of
    correctness flags.
    """
    correct = seq_prefix.labels.astype(bool) if isinstance(seq_prefix, InteractionSequence) else seq_prefix
    correct = np.asarray(correct, dtype=bool)
    if correct.size == 0:
        raise DataError("empty prefix")
    return consistent_count(correct, relevances) / correct.size


def histogram(counts_and_lengths) -> list[int]:
    """Rates n/m binned into 10 bins of width 0.1; 1.0 goes in the last bin."""
    bins = [0] * NUM_BINS
    for n, m in counts_and_lengths:
        bins[min(NUM_BINS * n // m, NUM_BINS - 1)] += 1
    return bins


@dataclass
class ConsistencyRow:
    sequence_id: object
    group: str
    predicted_correctly: bool
    consistent_rate: float
    consistent: int
    length: int


@dataclass
class ConsistencyReport:
    rows: list[ConsistencyRow]
    histograms: dict[str, list[int]]
    excluded_ties: int
    explained: list[ExplainedPrefix] = field(repr=False, default_factory=list)

    def rates(self, group: str | None = None, correct_only: bool = True) -> np.ndarray:
        return np.array([
            r.consistent_rate for r in self.rows
            if (not correct_only or r.predicted_correctly) and (group is None or r.group == group)
        ])

    def group_sizes(self) -> dict[str, int]:
        sizes = {"positive": 0, "negative": 0}
        for r in self.rows:
            if r.predicted_correctly:
                sizes[r.group] += 1
        return sizes

    def histogram_json(self) -> dict:
        return {
            "bin_edges": [round(k / NUM_BINS, 1) for k in range(NUM_BINS + 1)],
            "groups": {
                g: {"count": n, "bins": self.histograms[g]} for g, n in self.group_sizes().items()
            },
            "excluded_ties": self.excluded_ties,
            "num_falsely_predicted": sum(1 for r in self.rows if not r.predicted_correctly),
        }


def consistency_study(
    params: ModelParams,
    dataset,
    prefix_len: int = 14,
    config: LrpConfig = LrpConfig(),
    orient: bool = True,
) -> ConsistencyReport:
    explained, ties = explain_prefixes(params, dataset, prefix_len, config, orient)
    if not any(e.predicted_correctly for e in explained):
        raise DataError(
            f"no correctly predicted sequence of length >= {prefix_len + 1} "
            f"({len(explained)} eligible, {ties} ties)"
        )
    rows = []
    for e in explained:
        n = consistent_count(e.prefix.labels.astype(bool), e.relevances)
        rows.append(ConsistencyRow(e.sequence_id, e.prediction, e.predicted_correctly, n / prefix_len, n, prefix_len))
    hist = {
        g: histogram((r.consistent, r.length) for r in rows if r.predicted_correctly and r.group == g)
        for g in ("positive", "negative")
    }
    return ConsistencyReport(rows, hist, ties, explained)


def shuffled_median_rates(report: ConsistencyReport, num_shuffles: int = 100, seed: int = 0) -> np.ndarray:
    """Permutation baseline: median consistent rate after shuffling each
    sequence's relevance values across its positions."""
    rng = np.random.default_rng(int(seed))
    correct = [e for e in report.explained if e.predicted_correctly]
    medians = np.empty(num_shuffles)
    for s in range(num_shuffles):
        rates = [
            consistent_rate(e.prefix, rng.permutation(e.relevances)) for e in correct
        ]
        medians[s] = np.median(rates)
    return medians


def write_consistency(report: ConsistencyReport, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_path = out_dir / "consistency.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sequence_id", "group", "predicted_correctly", "consistent_rate"))
        for r in report.rows:
            w.writerow((r.sequence_id, r.group, int(r.predicted_correctly), repr(r.consistent_rate)))
    json_path = out_dir / "consistency_histogram.json"
    json_path.write_text(json.dumps(report.histogram_json(), indent=2) + "\n", encoding="utf-8")
    return csv_path, json_path


# --------------------------------------------------------------------------
# deletion

@dataclass
class DeletionCurve:
    strategy: str
    group: str
    points: list[tuple[int, float]]
    num_sequences: int
    num_repeats: int = 1

    def accuracy(self, k: int) -> float:
        return dict(self.points)[k]


def deletion_order(relevances, descending: bool) -> np.ndarray:
    """Prefix positions in the order they are deleted (ties by position)."""
    r = np.asarray(relevances, dtype=np.float64)
    key = -r if descending else r
    return np.argsort(key, kind="stable")


def _accuracy_after_deletion(params, items: list[ExplainedPrefix], removed: list[np.ndarray]) -> float:
    """Re-run each shortened prefix from scratch and score the target prediction."""
    shortened = []
    for e, drop in zip(items, removed):
        keep = np.setdiff1d(np.arange(len(e.prefix)), drop)
        shortened.append(e.prefix.subsequence(keep))
    batch = make_batch(shortened, params.num_concepts)
    lengths = batch.mask.sum(axis=0)
    y = forward_batch(params, batch)["y"]
    cols = np.arange(len(items))
    p = y[lengths - 1, cols, [e.target_concept for e in items]]
    truth = np.array([e.target_correct for e in items])
    return float(np.mean((p >= 0.5) == truth))


def deletion_study(
    params: ModelParams,
    dataset,
    prefix_len: int = 14,
    max_deletions: int = 10,
    num_random_repeats: int = 10,
    seed: int = 0,
    config: LrpConfig = LrpConfig(),
    false_order: str = "by_prediction",
    orient: bool = True,
    explained: list[ExplainedPrefix] | None = None,
) -> list[DeletionCurve]:
    """Accuracy as questions are deleted in relevance order vs at random.

    Positive predictions lose their most positive questions first and
    negative predictions their most negative ones. ``false_order`` sets
    the order for falsely predicted groups: ``"by_prediction"`` uses that
    same rule, ``"reversed"`` flips it.
    """
    if not 0 <= max_deletions < prefix_len:
        raise ConfigError(f"max_deletions must be in [0, prefix_len), got {max_deletions} with prefix_len {prefix_len}")
    if false_order not in ("by_prediction", "reversed"):
        raise ConfigError(f"false_order must be 'by_prediction' or 'reversed', got {false_order!r}")
    if explained is None:
        explained, _ = explain_prefixes(params, dataset, prefix_len, config, orient)
    rng = np.random.default_rng(int(seed))
    curves = []
    for group in GROUPS:
        items = [e for e in explained if e.group == group]
        if not items:
            log.info("deletion_study: group %s is empty, curve omitted", group)
            continue
        descending = group.endswith("positive")
        if group.startswith("false") and false_order == "reversed":
            descending = not descending
        orders = [deletion_order(e.relevances, descending) for e in items]
        ranked = [(k, _accuracy_after_deletion(params, items, [o[:k] for o in orders]))
                  for k in range(max_deletions + 1)]
        curves.append(DeletionCurve("relevance_ordered", group, ranked, len(items)))

        perms = [[rng.permutation(prefix_len) for _ in items] for _ in range(num_random_repeats)]
        rand = []
        for k in range(max_deletions + 1):
            accs = [_accuracy_after_deletion(params, items, [p[:k] for p in rep]) for rep in perms]
            rand.append((k, float(np.mean(accs))))
        curves.append(DeletionCurve("random", group, rand, len(items), num_random_repeats))
    return curves


def write_deletion(curves: list[DeletionCurve], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("strategy", "group", "num_deleted", "accuracy"))
        for c in curves:
            for k, acc in c.points:
                w.writerow((c.strategy, c.group, k, repr(acc)))
    return path


# --------------------------------------------------------------------------
# concept graph

@dataclass(frozen=True)
class ConceptEdge:
    source: int
    target: int
    mean_abs_relevance: float
    support_count: int
    argmax: bool = False


@dataclass
class ConceptGraph:
    edges: list[ConceptEdge]
    note: str = ""

    def strongest_source(self, target: int) -> int | None:
        for e in self.edges:
            if e.target == target and e.argmax:
                return e.source
        return None

    def to_dict(self) -> dict:
        return {
            "edges": [
                {
                    "source": e.source,
                    "target": e.target,
                    "mean_abs_relevance": e.mean_abs_relevance,
                    "support_count": e.support_count,
                    "argmax": e.argmax,
                }
                for e in self.edges
            ],
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ConceptGraph:
        return cls([ConceptEdge(**e) for e in doc["edges"]], doc.get("note", ""))


def graph_from_pairs(pairs) -> ConceptGraph:
    """Aggregate ``(source, target, relevance)`` triples into a graph.

    Same-concept pairs are dropped; each edge keeps the mean absolute
    relevance and the number of contributing pairs, and for every target
    the source with the largest mean is flagged (lowest id on ties).
    """
    sums: dict[tuple[int, int], list[float]] = {}
    for src, tgt, r in pairs:
        if src == tgt:
            continue
        acc = sums.setdefault((int(src), int(tgt)), [0.0, 0])
        acc[0] += abs(float(r))
        acc[1] += 1
    if not sums:
        return ConceptGraph([], note="no cross-concept pairs")
    best: dict[int, tuple[float, int]] = {}
    means = {}
    for (src, tgt), (total, n) in sorted(sums.items()):
        means[(src, tgt)] = total / n
        cur = best.get(tgt)
        if cur is None or means[(src, tgt)] > cur[0]:
            best[tgt] = (means[(src, tgt)], src)
    edges = [
        ConceptEdge(src, tgt, means[(src, tgt)], sums[(src, tgt)][1], best[tgt][1] == src)
        for (src, tgt) in sorted(sums, key=lambda k: (k[1], k[0]))
    ]
    return ConceptGraph(edges)


def concept_graph(
    params: ModelParams,
    dataset,
    prefix_len: int = 14,
    config: LrpConfig = LrpConfig(),
    explained: list[ExplainedPrefix] | None = None,
) -> ConceptGraph:
    if explained is None:
        explained, _ = explain_prefixes(params, dataset, prefix_len, config)
    pairs = [
        (step.concept_id, e.target_concept, r)
        for e in explained if e.predicted_correctly
        for step, r in zip(e.prefix.steps, e.relevances)
    ]
    graph = graph_from_pairs(pairs)
    if not explained or not any(e.predicted_correctly for e in explained):
        graph.note = "no correctly predicted sequences"
    return graph


def _dot_id(label) -> str:
    return '"' + str(label).replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_graph(graph: ConceptGraph, fmt: str, path, concept_labels=None) -> Path:
    path = Path(path)
    name = (lambda c: concept_labels[c]) if concept_labels is not None else (lambda c: c)
    if fmt == "json":
        doc = graph.to_dict()
        if concept_labels is not None:
            doc["concept_labels"] = list(concept_labels)
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    elif fmt == "dot":
        lines = ["digraph concepts {"]
        for e in graph.edges:
            w = f"{e.mean_abs_relevance:.6g}"
            attrs = f'label="{w}", weight={w}, support={e.support_count}'
            if e.argmax:
                attrs += ", argmax=true, style=bold"
            lines.append(f"  {_dot_id(name(e.source))} -> {_dot_id(name(e.target))} [{attrs}];")
        lines.append("}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ConfigError(f"unknown graph format {fmt!r} (expected 'dot' or 'json')")
    return path


def load_graph_json(path) -> ConceptGraph:
    return ConceptGraph.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
