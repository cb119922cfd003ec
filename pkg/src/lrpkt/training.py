"""Backpropagation-through-time training and evaluation.

The loss is the DKT objective: after step t the model's output for the
concept of step t+1 is scored against that step's correctness with
binary cross-entropy, averaged over every prediction point.

Everything runs on padded minibatches of shape (T, B, ...). A single
sequence is just a batch of one, so ``backward_bptt`` and ``train``
share the same code.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, ModelError, NoPredictionsError
from .model import (
    GATES,
    PARAM_NAMES,
    ForwardTrace,
    InteractionSequence,
    ModelConfig,
    ModelParams,
    init_params,
    lstm_step,
    sigmoid,
)

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 20
    dropout_rate: float = 0.5
    iterations: int = 500
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    max_sequence_length: int = 200
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        # zero is accepted so that a run can be checked against its initialization
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.max_sequence_length < 2:
            raise ConfigError("max_sequence_length must allow at least one prediction")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("Adam betas must lie in [0, 1) and eps must be positive")

    @property
    def dropout_keep(self) -> float:
        return 1.0 - self.dropout_rate


@dataclass(frozen=True)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> AdamState:
        return cls(
            m={n: np.zeros_like(a) for n, a in params.as_dict().items()},
            v={n: np.zeros_like(a) for n, a in params.as_dict().items()},
        )


@dataclass(frozen=True)
class EvalMetrics:
    acc: float
    auc: float
    loss: float
    num_predictions: int
    one_class: bool = False

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "auc": self.auc,
            "loss": self.loss,
            "num_predictions": self.num_predictions,
            "one_class_flag": self.one_class,
        }


# --------------------------------------------------------------------------
# batching

@dataclass(frozen=True)
class Batch:
    """Padded minibatch. ``inputs`` is the one-hot tensor (T, B, 2M)."""

    inputs: np.ndarray
    concepts: np.ndarray  # (T, B) int, 0 on padding
    labels: np.ndarray  # (T, B) float
    mask: np.ndarray  # (T, B) bool

    @property
    def shape(self):
        return self.mask.shape

    def prediction_points(self):
        """Mask, target concept and label for the prediction made after each step."""
        pmask = np.zeros_like(self.mask)
        pmask[:-1] = self.mask[1:]
        target = np.zeros_like(self.concepts)
        target[:-1] = self.concepts[1:]
        label = np.zeros_like(self.labels)
        label[:-1] = self.labels[1:]
        return pmask, target, label


def make_batch(seqs: Sequence[InteractionSequence], num_concepts: int) -> Batch:
    T = max(len(s) for s in seqs)
    B = len(seqs)
    concepts = np.zeros((T, B), dtype=np.int64)
    labels = np.zeros((T, B))
    mask = np.zeros((T, B), dtype=bool)
    for b, seq in enumerate(seqs):
        n = len(seq)
        c = seq.concepts
        if c.min() < 0 or c.max() >= num_concepts:
            raise ModelError(f"sequence {seq.learner_id!r} has concepts outside [0, {num_concepts})")
        concepts[:n, b] = c
        labels[:n, b] = seq.labels
        mask[:n, b] = True
    inputs = np.zeros((T, B, 2 * num_concepts))
    t_idx, b_idx = np.nonzero(mask)
    col = concepts[t_idx, b_idx] + num_concepts * (labels[t_idx, b_idx] == 0)
    inputs[t_idx, b_idx, col] = 1.0
    return Batch(inputs=inputs, concepts=concepts, labels=labels, mask=mask)


def chunk_sequences(seqs: Iterable[InteractionSequence], max_len: int) -> list[InteractionSequence]:
    """Split long sequences into consecutive pieces; pieces shorter than 2 are dropped."""
    out = []
    for seq in seqs:
        for start in range(0, len(seq), max_len):
            piece = seq.steps[start:start + max_len]
            if len(piece) >= 2:
                out.append(InteractionSequence(seq.learner_id, piece))
    return out


# --------------------------------------------------------------------------
# forward / loss / backward

def forward_batch(params: ModelParams, batch: Batch, dropout_mask: np.ndarray | None = None):
    """Run the LSTM over a padded batch.

    ``dropout_mask`` (T, B, H) multiplies h_t before the output layer; it
    should already carry the inverted-dropout 1/keep scaling. Returns a
    dict of cached activations, all shaped (T, B, ...) except ``c`` and
    ``h`` which have T+1 rows (row 0 is the zero initial state).
    """
    T, B = batch.shape
    H = params.hidden_size
    f, i, g, o = (np.empty((T, B, H)) for _ in range(4))
    c = np.zeros((T + 1, B, H))
    h = np.zeros((T + 1, B, H))
    for t in range(T):
        f[t], i[t], g[t], c[t + 1], o[t], h[t + 1] = lstm_step(params, batch.inputs[t], h[t], c[t])
    hd = h[1:] if dropout_mask is None else h[1:] * dropout_mask
    y = sigmoid(hd @ params.w_yh.T + params.b_y)
    return {"f": f, "i": i, "g": g, "o": o, "c": c, "h": h, "hd": hd, "y": y}


def _bce_terms(y: np.ndarray, batch: Batch):
    pmask, target, label = batch.prediction_points()
    T, B = batch.shape
    p = np.take_along_axis(y, target[..., None], axis=2)[..., 0]
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(label * np.log(pc) + (1.0 - label) * np.log(1.0 - pc))
    return pmask, target, label, p, bce


def batch_loss(params: ModelParams, batch: Batch, dropout_mask=None) -> float:
    cache = forward_batch(params, batch, dropout_mask)
    pmask, _, _, _, bce = _bce_terms(cache["y"], batch)
    n = int(pmask.sum())
    if n == 0:
        raise NoPredictionsError("batch has no prediction points (all sequences shorter than 2)")
    return float(bce[pmask].sum() / n)


def loss_and_grads(params: ModelParams, batch: Batch, dropout_mask=None):
    """Mean next-step BCE over the batch and its exact gradient."""
    cache = forward_batch(params, batch, dropout_mask)
    pmask, target, label, p, bce = _bce_terms(cache["y"], batch)
    n = int(pmask.sum())
    if n == 0:
        raise NoPredictionsError("batch has no prediction points (all sequences shorter than 2)")
    loss = float(bce[pmask].sum() / n)

    T, B = batch.shape
    # d(BCE)/d(logit) = p - label; zero where the clamp is active
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    dlogit = np.where(pmask & inside, (p - label) / n, 0.0)
    dz = np.zeros_like(cache["y"])
    np.put_along_axis(dz, target[..., None], dlogit[..., None], axis=2)

    grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_NAMES}
    grads["w_yh"] = np.einsum("tbm,tbh->mh", dz, cache["hd"])
    grads["b_y"] = dz.sum(axis=(0, 1))
    dh_out = dz @ params.w_yh
    if dropout_mask is not None:
        dh_out = dh_out * dropout_mask

    f, i, g, o, c, h = (cache[k] for k in ("f", "i", "g", "o", "c", "h"))
    w_h = {gate: getattr(params, f"w_{gate}h") for gate in GATES}
    dh_next = np.zeros((B, params.hidden_size))
    dc_next = np.zeros((B, params.hidden_size))
    for t in range(T - 1, -1, -1):
        dh = dh_out[t] + dh_next
        tanh_c = np.tanh(c[t + 1])
        dc = dh * o[t] * (1.0 - tanh_c**2) + dc_next
        da = {
            "o": dh * tanh_c * o[t] * (1.0 - o[t]),
            "i": dc * g[t] * i[t] * (1.0 - i[t]),
            "c": dc * i[t] * (1.0 - g[t] ** 2),
            "f": dc * c[t] * f[t] * (1.0 - f[t]),
        }
        dc_next = dc * f[t]
        dh_next = np.zeros_like(dh)
        x_t = batch.inputs[t]
        for gate in GATES:
            grads[f"w_{gate}h"] += da[gate].T @ h[t]
            grads[f"w_{gate}x"] += da[gate].T @ x_t
            grads[f"b_{gate}"] += da[gate].sum(axis=0)
            dh_next += da[gate] @ w_h[gate]
    return loss, grads


def next_step_loss(trace: ForwardTrace, seq: InteractionSequence) -> float:
    """Mean BCE of y_t[concept of step t+1] against that step's correctness."""
    T = len(seq)
    if T < 2:
        raise NoPredictionsError("a sequence needs at least 2 steps to score a prediction")
    if len(trace) != T:
        raise ModelError(f"trace has {len(trace)} steps, sequence has {T}")
    p = trace.y[np.arange(T - 1), seq.concepts[1:]]
    label = seq.labels[1:]
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(label * np.log(p) + (1.0 - label) * np.log(1.0 - p))))


def backward_bptt(params: ModelParams, seq: InteractionSequence, dropout_mask=None) -> dict[str, np.ndarray]:
    """Gradients of ``next_step_loss`` for one sequence.

    ``dropout_mask`` is an optional (T, H) array applied to h_t before
    the output layer.
    """
    batch = make_batch([seq], params.num_concepts)
    mask = None if dropout_mask is None else np.asarray(dropout_mask, dtype=np.float64)[:, None, :]
    return loss_and_grads(params, batch, mask)[1]


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_update(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, config: TrainConfig):
    """One bias-corrected Adam step. Returns ``(new_params, new_state)``."""
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate
    step = state.step + 1
    new_m, new_v, new_p = {}, {}, {}
    for name in PARAM_NAMES:
        p = getattr(params, name)
        g = grads[name]
        if g.shape != p.shape:
            raise ModelError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        new_p[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return ModelParams(**new_p), AdamState(m=new_m, v=new_v, step=step)


def _sequences(dataset) -> list[InteractionSequence]:
    return list(getattr(dataset, "sequences", dataset))


def train(dataset, model_config: ModelConfig, train_config: TrainConfig, init: ModelParams | None = None):
    """Fit a model with minibatch Adam.

    One iteration is one minibatch update. Batches are drawn by walking
    seeded permutations of the training chunks. Returns the final
    parameters and the per-iteration (pre-update) batch losses.
    """
    chunks = chunk_sequences(_sequences(dataset), train_config.max_sequence_length)
    if not chunks:
        raise NoPredictionsError("training set has no sequence with at least 2 steps")
    params = init if init is not None else init_params(model_config)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(int(train_config.seed))
    B = min(train_config.batch_size, len(chunks))
    keep = train_config.dropout_keep
    H = model_config.hidden_size

    order = rng.permutation(len(chunks))
    pos = 0
    losses = []
    for it in range(train_config.iterations):
        if pos + B > len(order):
            order = rng.permutation(len(chunks))
            pos = 0
        batch = make_batch([chunks[k] for k in order[pos:pos + B]], model_config.num_concepts)
        pos += B
        drop = None
        if train_config.dropout_rate > 0:
            T = batch.shape[0]
            drop = (rng.random((T, B, H)) < keep) / keep
        loss, grads = loss_and_grads(params, batch, drop)
        if train_config.clip_norm is not None:
            grads, _ = clip_by_global_norm(grads, train_config.clip_norm)
        params, state = adam_update(params, grads, state, train_config)
        losses.append(loss)
        if it % 50 == 0:
            log.debug("iteration %d loss %.5f", it, loss)
    return params, losses


# --------------------------------------------------------------------------
# metrics

def auc_score(labels, scores) -> tuple[float, bool]:
    """Rank-based (Mann-Whitney) AUC with ties counted one half.

    Returns ``(auc, one_class)``; when only one class is present the
    AUC is undefined and 0.5 is reported with the flag set.
    """
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5, True
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg)), False


def predictions(params: ModelParams, dataset, batch_size: int = 256):
    """Pooled next-step ``(probabilities, labels)`` over a dataset, dropout off."""
    seqs = [s for s in _sequences(dataset) if len(s) >= 2]
    probs, labels = [], []
    for start in range(0, len(seqs), batch_size):
        batch = make_batch(seqs[start:start + batch_size], params.num_concepts)
        cache = forward_batch(params, batch)
        pmask, _, label, p, _ = _bce_terms(cache["y"], batch)
        # transpose so points come out sequence by sequence, in time order
        probs.append(p.T[pmask.T])
        labels.append(label.T[pmask.T])
    if not probs:
        return np.empty(0), np.empty(0)
    return np.concatenate(probs), np.concatenate(labels)


def evaluate(params: ModelParams, dataset) -> EvalMetrics:
    p, label = predictions(params, dataset)
    if p.size == 0:
        raise NoPredictionsError("dataset has no prediction points")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(np.mean(-(label * np.log(pc) + (1.0 - label) * np.log(1.0 - pc))))
    acc = float(np.mean((p >= 0.5) == (label == 1.0)))
    auc, one_class = auc_score(label, p)
    return EvalMetrics(acc=acc, auc=auc, loss=loss, num_predictions=int(p.size), one_class=one_class)


def base_rate_accuracy(train_dataset, test_dataset) -> float:
    """ACC of predicting the training set's majority outcome everywhere."""
    train_labels = np.concatenate([s.labels[1:] for s in _sequences(train_dataset) if len(s) >= 2])
    test_labels = np.concatenate([s.labels[1:] for s in _sequences(test_dataset) if len(s) >= 2])
    majority = 1.0 if train_labels.mean() >= 0.5 else 0.0
    return float(np.mean(test_labels == majority))
