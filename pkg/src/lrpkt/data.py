"""Interaction logs: CSV ingestion, dataset building, splits, synthetic BKT data.

CSV schema (header names are case-insensitive)::

    order_id,user_id,problem_id,skill_id,correct

``order_id`` may be absent, in which case file order is used. An empty
``skill_id`` marks an unlabeled record, which ``build_dataset`` drops.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, SchemaError
from .model import Interaction, InteractionSequence

log = logging.getLogger(__name__)

CSV_COLUMNS = ("order_id", "user_id", "problem_id", "skill_id", "correct")
REQUIRED_COLUMNS = ("user_id", "problem_id", "skill_id", "correct")


@dataclass(frozen=True)
class RawRecord:
    order_id: int
    user_id: str
    problem_id: str
    skill_id: str | None
    correct: int
    line: int = 0


@dataclass(frozen=True)
class ConceptVocab:
    """Dense mapping from skill label to concept index."""

    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise DataError("duplicate labels in concept vocabulary")

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return str(label) in self._index

    @property
    def _index(self) -> dict[str, int]:
        # cached on first use; the dataclass is frozen
        try:
            return self.__dict__["_idx"]
        except KeyError:
            idx = {label: k for k, label in enumerate(self.labels)}
            object.__setattr__(self, "_idx", idx)
            return idx

    def index(self, label) -> int:
        try:
            return self._index[str(label)]
        except KeyError:
            raise DataError(f"concept {label!r} is not in the model vocabulary") from None

    def label(self, index: int) -> str:
        return self.labels[index]

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> ConceptVocab:
        return cls(tuple(sorted(set(labels), key=_natural_key)))


def _natural_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[InteractionSequence, ...]
    vocab: ConceptVocab

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        M = len(self.vocab)
        for seq in self.sequences:
            if any(not 0 <= s.concept_id < M for s in seq.steps):
                raise DataError(f"sequence {seq.learner_id!r} references a concept outside the vocabulary")

    def __len__(self):
        return len(self.sequences)

    @property
    def num_concepts(self) -> int:
        return len(self.vocab)

    def subset(self, indices: Sequence[int]) -> Dataset:
        return Dataset(tuple(self.sequences[k] for k in indices), self.vocab)

    def summary(self) -> dict:
        return {
            "num_records": sum(len(s) for s in self.sequences),
            "num_questions": len({st.question_id for s in self.sequences for st in s.steps}),
            "num_concepts": len(self.vocab),
            "num_students": len({s.learner_id for s in self.sequences}),
        }

    def to_records(self) -> list[RawRecord]:
        """Flatten back to records; ``order_id`` is a running counter."""
        out = []
        for seq in self.sequences:
            for st in seq.steps:
                out.append(RawRecord(
                    order_id=len(out) + 1,
                    user_id=str(seq.learner_id),
                    problem_id=str(st.question_id),
                    skill_id=self.vocab.label(st.concept_id),
                    correct=int(bool(st.correct)),
                ))
        return out


# --------------------------------------------------------------------------
# CSV

def _parse_correct(value: str) -> int | None:
    v = value.strip()
    if v in ("0", "1"):
        return int(v)
    try:
        f = float(v)
    except ValueError:
        return None
    return int(f) if f in (0.0, 1.0) else None


def load_csv(path, encoding: str = "utf-8") -> list[RawRecord]:
    """Parse an interaction log.

    Raises :class:`SchemaError` for missing columns and :class:`DataError`
    listing the line numbers of rows with missing or invalid fields.
    """
    path = Path(path)
    with path.open(newline="", encoding=encoding) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (a header row is required)") from None
        cols = {name.strip().lower(): k for k, name in enumerate(header)}
        missing = [c for c in REQUIRED_COLUMNS if c not in cols]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        has_order = "order_id" in cols

        records, problems = [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                problems.append(f"line {line}: expected {len(header)} fields, got {len(row)}")
                continue
            get = lambda name: row[cols[name]].strip()
            user, problem, skill, correct_raw = get("user_id"), get("problem_id"), get("skill_id"), get("correct")
            if not user or not problem or not correct_raw:
                problems.append(f"line {line}: missing user_id, problem_id or correct")
                continue
            correct = _parse_correct(correct_raw)
            if correct is None:
                problems.append(f"line {line}: correct must be 0 or 1, got {correct_raw!r}")
                continue
            if has_order:
                try:
                    order = int(float(get("order_id")))
                except ValueError:
                    problems.append(f"line {line}: order_id {get('order_id')!r} is not an integer")
                    continue
            else:
                order = line
            records.append(RawRecord(order, user, problem, skill or None, correct, line))
    if problems:
        shown = "; ".join(problems[:10])
        more = f" (and {len(problems) - 10} more)" if len(problems) > 10 else ""
        raise DataError(f"{path}: {shown}{more}")
    return records


def write_csv(records: Iterable[RawRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow((r.order_id, r.user_id, r.problem_id, r.skill_id or "", r.correct))


# --------------------------------------------------------------------------
# dataset building

def build_dataset(
    records: Sequence[RawRecord],
    min_sequence_length: int = 2,
    vocab: ConceptVocab | None = None,
    multi_skill_sep: str | None = "_",
    dedup: bool = True,
) -> Dataset:
    """Group records into per-learner sequences.

    Unlabeled records are dropped, rows tagged with several skills
    (joined by ``multi_skill_sep``) become one interaction per skill,
    each learner's records are stably sorted by ``order_id``, exact
    duplicate (problem, skill, correct) sequences are kept once, and
    sequences shorter than ``min_sequence_length`` are discarded.

    With a fixed ``vocab`` (e.g. the one a model was trained with),
    records on unknown skills are dropped.
    """
    if not records:
        raise DataError("no records to build a dataset from")
    if min_sequence_length < 1:
        raise ConfigError("min_sequence_length must be >= 1")

    by_user: dict[str, list[tuple[int, int, str, str, int]]] = {}
    unlabeled = unknown = 0
    for pos, r in enumerate(records):
        if not r.skill_id:
            unlabeled += 1
            continue
        skills = r.skill_id.split(multi_skill_sep) if multi_skill_sep else [r.skill_id]
        for skill in skills:
            skill = skill.strip()
            if not skill:
                continue
            if vocab is not None and skill not in vocab:
                unknown += 1
                continue
            by_user.setdefault(r.user_id, []).append((r.order_id, pos, r.problem_id, skill, r.correct))

    seen = set()
    kept: list[tuple[str, list[tuple[str, str, int]]]] = []
    duplicates = short = 0
    for user, rows in by_user.items():
        rows.sort(key=lambda row: (row[0], row[1]))
        steps = [(problem, skill, correct) for _, _, problem, skill, correct in rows]
        key = tuple(steps)
        if dedup and key in seen:
            duplicates += 1
            continue
        seen.add(key)
        if len(steps) < min_sequence_length:
            short += 1
            continue
        kept.append((user, steps))
    log.info(
        "build_dataset: %d unlabeled, %d unknown-skill, %d duplicate, %d short; %d sequences kept",
        unlabeled, unknown, duplicates, short, len(kept),
    )
    if not kept:
        raise DataError("no sequences left after filtering")

    if vocab is None:
        vocab = ConceptVocab.from_labels(skill for _, steps in kept for _, skill, _ in steps)
    sequences = tuple(
        InteractionSequence(
            user,
            tuple(Interaction(problem, vocab.index(skill), bool(correct)) for problem, skill, correct in steps),
        )
        for user, steps in kept
    )
    return Dataset(sequences, vocab)


def load_dataset(path, min_sequence_length: int = 2, vocab: ConceptVocab | None = None, **kwargs) -> Dataset:
    return build_dataset(load_csv(path), min_sequence_length=min_sequence_length, vocab=vocab, **kwargs)


def split(dataset: Dataset, train_fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded sequence-level random split into (train, test)."""
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    perm = np.random.default_rng(int(seed)).permutation(n)
    n_train = int(round(train_fraction * n))
    return dataset.subset(sorted(perm[:n_train])), dataset.subset(sorted(perm[n_train:]))


def truncate(dataset: Dataset, length: int) -> Dataset:
    """Keep the first ``length`` steps of every sequence at least that long."""
    seqs = tuple(
        InteractionSequence(s.learner_id, s.steps[:length]) for s in dataset.sequences if len(s) >= length
    )
    return Dataset(seqs, dataset.vocab)


def write_summary(dataset: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset.summary(), indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class BktParams:
    """Per-concept Bayesian knowledge tracing parameters for the simulator.

    ``latent_skill`` optionally maps several concepts onto one hidden
    mastery state; concepts sharing a latent skill are statistically
    coupled (practice on one is evidence about the other). By default
    every concept has its own state. The initial mastery probability of
    a shared state is that of its lowest-numbered concept.
    """

    p_init: tuple[float, ...]
    p_learn: tuple[float, ...]
    p_slip: tuple[float, ...]
    p_guess: tuple[float, ...]
    num_students: int = 100
    questions_per_student: int = 50
    seed: int = 0
    latent_skill: tuple[int, ...] | None = None
    items_per_concept: int = 10

    def __post_init__(self):
        for name in ("p_init", "p_learn", "p_slip", "p_guess"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        M = len(self.p_init)
        if M < 1:
            raise ConfigError("at least one concept is required")
        for name in ("p_learn", "p_slip", "p_guess"):
            if len(getattr(self, name)) != M:
                raise ConfigError(f"{name} has {len(getattr(self, name))} entries, expected {M}")
        for name in ("p_init", "p_learn", "p_slip", "p_guess"):
            for v in getattr(self, name):
                if not 0.0 <= v <= 1.0:
                    raise ConfigError(f"{name} value {v} is not a probability")
        for s, g in zip(self.p_slip, self.p_guess):
            if not s + g < 1.0:
                raise ConfigError(f"p_slip + p_guess must be < 1 (got {s} + {g})")
        if self.num_students < 0 or self.questions_per_student < 1 or self.items_per_concept < 1:
            raise ConfigError("num_students >= 0, questions_per_student >= 1 and items_per_concept >= 1 required")
        if self.latent_skill is not None:
            object.__setattr__(self, "latent_skill", tuple(int(k) for k in self.latent_skill))
            if len(self.latent_skill) != M or min(self.latent_skill) < 0:
                raise ConfigError("latent_skill must give a non-negative group id per concept")

    @property
    def num_concepts(self) -> int:
        return len(self.p_init)

    @classmethod
    def uniform(cls, num_concepts: int, p_init=0.4, p_learn=0.3, p_slip=0.1, p_guess=0.2, **kwargs) -> BktParams:
        M = num_concepts
        return cls((p_init,) * M, (p_learn,) * M, (p_slip,) * M, (p_guess,) * M, **kwargs)


def generate_synthetic(params: BktParams) -> Dataset:
    """Simulate learners answering uniformly drawn concepts.

    At each step a concept is drawn, the answer is correct with
    probability ``1 - p_slip`` if its latent skill is mastered and
    ``p_guess`` otherwise, then an unmastered skill becomes mastered with
    probability ``p_learn`` of the practiced concept.
    """
    M = params.num_concepts
    S, Q = params.num_students, params.questions_per_student
    latent = np.array(params.latent_skill if params.latent_skill is not None else range(M))
    L = int(latent.max()) + 1
    first_concept = np.array([int(np.flatnonzero(latent == k)[0]) if (latent == k).any() else 0 for k in range(L)])
    p_init = np.asarray(params.p_init)[first_concept]
    p_learn, p_slip, p_guess = (np.asarray(v) for v in (params.p_learn, params.p_slip, params.p_guess))

    rng = np.random.default_rng(int(params.seed))
    mastered = rng.random((S, L)) < p_init
    concepts = np.empty((S, Q), dtype=np.int64)
    items = np.empty((S, Q), dtype=np.int64)
    correct = np.empty((S, Q), dtype=bool)
    rows = np.arange(S)
    for q in range(Q):
        c = rng.integers(M, size=S)
        items[:, q] = rng.integers(params.items_per_concept, size=S)
        known = mastered[rows, latent[c]]
        p_correct = np.where(known, 1.0 - p_slip[c], p_guess[c])
        correct[:, q] = rng.random(S) < p_correct
        learns = rng.random(S) < p_learn[c]
        mastered[rows, latent[c]] = known | learns
        concepts[:, q] = c

    width = len(str(max(S - 1, 0)))
    sequences = tuple(
        InteractionSequence(
            f"s{s:0{width}d}",
            tuple(
                Interaction(f"c{concepts[s, q]}_i{items[s, q]}", int(concepts[s, q]), bool(correct[s, q]))
                for q in range(Q)
            ),
        )
        for s in range(S)
    )
    return Dataset(sequences, ConceptVocab(tuple(str(c) for c in range(M))))
