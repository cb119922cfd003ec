"""LSTM knowledge-tracing model: encoding, forward pass and persistence.

The cell follows the textbook LSTM with separate recurrent (``w_*h``)
and input (``w_*x``) matrices per gate, and a sigmoid output layer that
gives one mastery probability per concept::

    f_t  = sigmoid(W_fh h_{t-1} + W_fx x_t + b_f)
    i_t  = sigmoid(W_ih h_{t-1} + W_ix x_t + b_i)
    c~_t = tanh(W_ch h_{t-1} + W_cx x_t + b_c)
    C_t  = f_t * C_{t-1} + i_t * c~_t
    o_t  = sigmoid(W_oh h_{t-1} + W_ox x_t + b_o)
    h_t  = o_t * tanh(C_t)
    y_t  = sigmoid(W_yh h_t + b_y)

Timesteps are 1-based wherever they appear in a public signature; the
arrays of :class:`ForwardTrace` are plain 0-based numpy arrays (see its
docstring for the offset).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Hashable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionError,
    EncodingError,
    FormatVersionError,
    MalformedModelError,
    ModelError,
)

FORMAT_VERSION = 1

GATES = ("f", "i", "c", "o")
PARAM_NAMES = (
    "w_fh", "w_fx", "b_f",
    "w_ih", "w_ix", "b_i",
    "w_ch", "w_cx", "b_c",
    "w_oh", "w_ox", "b_o",
    "w_yh", "b_y",
)


@dataclass(frozen=True)
class ModelConfig:
    num_concepts: int
    hidden_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if int(self.num_concepts) < 1:
            raise ModelError(f"num_concepts must be >= 1, got {self.num_concepts}")
        if int(self.hidden_size) < 1:
            raise ModelError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if not 0 <= int(self.seed) < 2**64:
            raise ModelError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def input_size(self) -> int:
        return 2 * self.num_concepts


def param_shapes(num_concepts: int, hidden_size: int) -> dict[str, tuple[int, ...]]:
    H, X, M = hidden_size, 2 * num_concepts, num_concepts
    shapes = {}
    for g in GATES:
        shapes[f"w_{g}h"] = (H, H)
        shapes[f"w_{g}x"] = (H, X)
        shapes[f"b_{g}"] = (H,)
    shapes["w_yh"] = (M, H)
    shapes["b_y"] = (M,)
    return shapes


@dataclass(frozen=True, eq=False)
class ModelParams:
    """All LSTM and output-layer weights, as read-only float64 arrays."""

    w_fh: np.ndarray
    w_fx: np.ndarray
    b_f: np.ndarray
    w_ih: np.ndarray
    w_ix: np.ndarray
    b_i: np.ndarray
    w_ch: np.ndarray
    w_cx: np.ndarray
    b_c: np.ndarray
    w_oh: np.ndarray
    w_ox: np.ndarray
    b_o: np.ndarray
    w_yh: np.ndarray
    b_y: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.w_yh.ndim != 2 or self.b_y.ndim != 1:
            raise ModelError("output layer must be a matrix and a vector")
        M, H = self.w_yh.shape
        expected = param_shapes(M, H)
        for name in PARAM_NAMES:
            shape = getattr(self, name).shape
            if shape != expected[name]:
                raise ModelError(f"{name} has shape {shape}, expected {expected[name]}")
            if not np.all(np.isfinite(getattr(self, name))):
                raise ModelError(f"{name} contains non-finite values")

    @property
    def num_concepts(self) -> int:
        return self.w_yh.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w_yh.shape[1]

    @property
    def input_size(self) -> int:
        return 2 * self.num_concepts

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, **arrays) -> ModelParams:
        d = self.as_dict()
        d.update(arrays)
        return ModelParams(**d)

    def equals(self, other: ModelParams) -> bool:
        """Bitwise equality of every tensor."""
        return all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES
        )

    @classmethod
    def zeros(cls, num_concepts: int, hidden_size: int) -> ModelParams:
        return cls(**{n: np.zeros(s) for n, s in param_shapes(num_concepts, hidden_size).items()})


def init_params(config: ModelConfig) -> ModelParams:
    """Weights uniform in [-1/sqrt(H), 1/sqrt(H)], biases zero."""
    rng = np.random.default_rng(int(config.seed))
    bound = 1.0 / math.sqrt(config.hidden_size)
    arrays = {}
    for name, shape in param_shapes(config.num_concepts, config.hidden_size).items():
        if name.startswith("b_"):
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(**arrays)


@dataclass(frozen=True)
class Interaction:
    question_id: Hashable
    concept_id: int
    correct: bool


@dataclass(frozen=True)
class InteractionSequence:
    learner_id: Hashable
    steps: tuple[Interaction, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise EncodingError(f"sequence for learner {self.learner_id!r} is empty")

    def __len__(self):
        return len(self.steps)

    @property
    def concepts(self) -> np.ndarray:
        return np.array([s.concept_id for s in self.steps], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([bool(s.correct) for s in self.steps], dtype=np.float64)

    def subsequence(self, keep: Sequence[int]) -> InteractionSequence:
        """Copy holding only the steps at the 0-based positions ``keep``."""
        return InteractionSequence(self.learner_id, tuple(self.steps[k] for k in keep))

    @classmethod
    def from_pairs(cls, pairs, learner_id="learner") -> InteractionSequence:
        """Build from ``(concept_id, correct)`` pairs; question ids are positions."""
        return cls(
            learner_id,
            tuple(Interaction(q, int(c), bool(ok)) for q, (c, ok) in enumerate(pairs)),
        )


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Cached activations of one forward pass over T steps.

    Row ``k`` of ``x, f, i, c_tilde, o, y`` belongs to timestep ``k + 1``.
    ``c`` and ``h`` carry one extra leading row for the zero initial
    state, so ``c[t]`` and ``h[t]`` are C_t and h_t for t in 0..T.
    """

    x: np.ndarray
    f: np.ndarray
    i: np.ndarray
    c_tilde: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name in ("x", "f", "i", "c_tilde", "o", "c", "h", "y"):
            getattr(self, name).setflags(write=False)

    def __len__(self):
        return self.y.shape[0]

    def bitwise_equal(self, other: ForwardTrace) -> bool:
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("x", "f", "i", "c_tilde", "o", "c", "h", "y")
        )


def sigmoid(z):
    return expit(z)


def encode_input(interaction: Interaction, num_concepts: int) -> np.ndarray:
    """One-hot of size 2M: ``concept`` if correct, ``M + concept`` otherwise."""
    c = interaction.concept_id
    if not isinstance(c, (int, np.integer)) or not 0 <= c < num_concepts:
        raise EncodingError(f"concept_id {c!r} outside [0, {num_concepts})")
    x = np.zeros(2 * num_concepts)
    x[c if interaction.correct else num_concepts + c] = 1.0
    return x


def input_index(concept_id: int, correct: bool, num_concepts: int) -> int:
    return concept_id if correct else num_concepts + concept_id


def lstm_step(params: ModelParams, x_t, h_prev, c_prev):
    """One LSTM cell update.

    Works on single vectors or on row-stacked batches (leading batch
    axis). Returns ``(f, i, c_tilde, c, o, h)``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    H, X = params.hidden_size, params.input_size
    if x_t.shape[-1] != X or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ModelError(
            f"lstm_step got x{x_t.shape}, h{h_prev.shape}, C{c_prev.shape}; "
            f"model expects input {X}, hidden {H}"
        )
    f = sigmoid(h_prev @ params.w_fh.T + x_t @ params.w_fx.T + params.b_f)
    i = sigmoid(h_prev @ params.w_ih.T + x_t @ params.w_ix.T + params.b_i)
    c_tilde = np.tanh(h_prev @ params.w_ch.T + x_t @ params.w_cx.T + params.b_c)
    c = f * c_prev + i * c_tilde
    o = sigmoid(h_prev @ params.w_oh.T + x_t @ params.w_ox.T + params.b_o)
    h = o * np.tanh(c)
    return f, i, c_tilde, c, o, h


def output_step(params: ModelParams, h_t) -> np.ndarray:
    h_t = np.asarray(h_t, dtype=np.float64)
    if h_t.shape[-1] != params.hidden_size:
        raise ModelError(f"hidden vector has size {h_t.shape[-1]}, expected {params.hidden_size}")
    return sigmoid(h_t @ params.w_yh.T + params.b_y)


def forward_sequence(params: ModelParams, seq: InteractionSequence) -> ForwardTrace:
    M, H, T = params.num_concepts, params.hidden_size, len(seq)
    x = np.stack([encode_input(step, M) for step in seq.steps])
    f, i, c_tilde, o = (np.empty((T, H)) for _ in range(4))
    c = np.zeros((T + 1, H))
    h = np.zeros((T + 1, H))
    y = np.empty((T, M))
    for t in range(T):
        f[t], i[t], c_tilde[t], c[t + 1], o[t], h[t + 1] = lstm_step(params, x[t], h[t], c[t])
        y[t] = output_step(params, h[t + 1])
    return ForwardTrace(x=x, f=f, i=i, c_tilde=c_tilde, o=o, c=c, h=h, y=y)


def predict_next(params: ModelParams, seq: InteractionSequence, target_concept: int) -> float:
    """Probability that the learner answers a question on ``target_concept`` correctly next."""
    if not 0 <= target_concept < params.num_concepts:
        raise EncodingError(f"target concept {target_concept} outside [0, {params.num_concepts})")
    return float(forward_sequence(params, seq).y[-1, target_concept])


# --------------------------------------------------------------------------
# persistence

def save_model(
    params: ModelParams,
    config: ModelConfig,
    path,
    concept_labels: Sequence[str] | None = None,
) -> None:
    if (config.num_concepts, config.hidden_size) != (params.num_concepts, params.hidden_size):
        raise ModelError("config dimensions do not match parameter shapes")
    doc: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "num_concepts": config.num_concepts,
        "hidden_size": config.hidden_size,
        "seed": int(config.seed),
        "weights": {name: getattr(params, name).tolist() for name in PARAM_NAMES},
    }
    if concept_labels is not None:
        if len(concept_labels) != config.num_concepts:
            raise ModelError("one concept label per concept is required")
        doc["concept_labels"] = [str(c) for c in concept_labels]
    # json writes floats with repr(), which round-trips float64 exactly
    text = json.dumps(doc, separators=(",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path, with_labels: bool = False):
    """Read a model file. Returns ``(params, config)``, plus labels if asked."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedModelError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise MalformedModelError(f"{path}: top level must be an object")
    if "format_version" not in doc:
        raise MalformedModelError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format_version {doc['format_version']!r}, expected {FORMAT_VERSION}"
        )
    try:
        M = doc["num_concepts"]
        H = doc["hidden_size"]
        weights = doc["weights"]
        if not isinstance(M, int) or not isinstance(H, int) or M < 1 or H < 1:
            raise MalformedModelError(f"{path}: dimensions must be positive integers")
        arrays = {}
        for name in PARAM_NAMES:
            try:
                arr = np.array(weights[name], dtype=np.float64)
            except (ValueError, TypeError):
                raise MalformedModelError(f"{path}: {name} is not a numeric array") from None
            arrays[name] = arr
        seed = doc.get("seed", 0)
    except KeyError as exc:
        raise MalformedModelError(f"{path}: missing key {exc}") from None
    except TypeError:
        raise MalformedModelError(f"{path}: weights must be an object") from None

    for name, shape in param_shapes(M, H).items():
        if arrays[name].shape != shape:
            raise DimensionError(
                f"{path}: {name} has shape {arrays[name].shape}, "
                f"num_concepts={M} and hidden_size={H} require {shape}"
            )
        if not np.all(np.isfinite(arrays[name])):
            raise MalformedModelError(f"{path}: {name} contains non-finite values")
    params = ModelParams(**arrays)
    config = ModelConfig(num_concepts=M, hidden_size=H, seed=seed)
    if not with_labels:
        return params, config
    labels = doc.get("concept_labels")
    if labels is not None and len(labels) != M:
        raise DimensionError(f"{path}: {len(labels)} concept labels for {M} concepts")
    return params, config, labels
