"""Epsilon-LRP for the knowledge-tracing LSTM.

Relevance starts at the predicted probability of one output neuron and
flows back along a single path per timestep::

    y_T[d] -> h_T -> C_T -> (forget share)      -> C_{T-1} -> ...
                        -> (input share) -> c~_T -> x_T
                                                 -> h_{T-1} -> C_{T-1} -> ...

Weighted connections use the epsilon rule (:func:`lrp_linear`).
Multiplicative connections (``o*tanh(C)``, ``f*C_prev``, ``i*c~``) give
all relevance to the source and none to the gate, so the gate weight
matrices (W_f*, W_i*, W_o*) never receive any. Activation functions
pass relevance through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EncodingError, ModelError
from .model import ForwardTrace, InteractionSequence, ModelParams, forward_sequence


@dataclass(frozen=True)
class LrpConfig:
    epsilon: float = 0.001
    delta: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.delta not in (0, 1):
            raise ConfigError(f"delta must be 0 or 1, got {self.delta}")


def _sign(z):
    # sign(0) is taken as +1 so stabilized denominators never vanish
    return np.where(np.asarray(z) >= 0, 1.0, -1.0)


def lrp_linear_layer(a_in, weights, bias, preact, relevance, config: LrpConfig, num_lower: int | None = None):
    """Epsilon rule for a whole layer ``preact = weights @ a_in + bias``.

    Returns the relevance of each lower neuron, summed over all upper
    neurons. ``num_lower`` is the N of the bias/stabilizer share when
    ``delta == 1`` and defaults to ``len(a_in)``.
    """
    a_in = np.asarray(a_in, dtype=np.float64)
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    bias = np.atleast_1d(np.asarray(bias, dtype=np.float64))
    preact = np.atleast_1d(np.asarray(preact, dtype=np.float64))
    relevance = np.atleast_1d(np.asarray(relevance, dtype=np.float64))
    n = a_in.shape[0] if num_lower is None else num_lower
    s = _sign(preact)
    numer = weights * a_in[None, :]
    if config.delta:
        numer = numer + ((s * config.epsilon + bias) / n)[:, None]
    return ((numer / (preact + s * config.epsilon)[:, None]) * relevance[:, None]).sum(axis=0)


def lrp_linear(activations_in, weights_row, bias_j, preact_j, relevance_j, config: LrpConfig, num_lower=None):
    """Share of one upper neuron's relevance received by each lower neuron."""
    return lrp_linear_layer(activations_in, weights_row, bias_j, preact_j, relevance_j, config, num_lower)


def lrp_gate(relevance_upper):
    """Multiplicative connection: ``(relevance_source, relevance_gate)``."""
    r = np.asarray(relevance_upper, dtype=np.float64)
    src = r.copy() if r.ndim else float(r)
    return src, np.zeros_like(r) if r.ndim else 0.0


def lrp_cell_split(f_t, c_prev, i_t, c_tilde_t, c_t, r_c, config: LrpConfig):
    """Divide cell relevance between the forget path and the input path."""
    c_t = np.asarray(c_t, dtype=np.float64)
    denom = c_t + config.epsilon * _sign(c_t)
    r_c = np.asarray(r_c, dtype=np.float64)
    r_forget = np.asarray(f_t) * np.asarray(c_prev) / denom * r_c
    r_input = np.asarray(i_t) * np.asarray(c_tilde_t) / denom * r_c
    return r_forget, r_input


@dataclass(frozen=True, eq=False)
class RelevanceTrace:
    """Relevance of every tracked neuron for one explained prediction.

    ``r_x[t-1]`` holds the input relevance of timestep t (1..T). ``r_h``,
    ``r_c`` have T+1 rows indexed by t (row 0 = initial state). ``r_c_tilde``
    rows follow ``r_x``. ``r_c`` is the total cell relevance (forget share
    from t+1 plus the relevance arriving through h_t).
    """

    target_timestep: int
    target_concept: int
    initial_relevance: float
    r_x: np.ndarray
    r_h: np.ndarray
    r_c: np.ndarray
    r_c_tilde: np.ndarray

    @property
    def question_relevance(self) -> np.ndarray:
        return self.r_x.sum(axis=1)

    @property
    def residual(self) -> float:
        """Relevance absorbed by biases, stabilizers and the initial state."""
        return float(self.initial_relevance - self.question_relevance.sum())

    def scaled(self, k: float) -> RelevanceTrace:
        return RelevanceTrace(
            self.target_timestep, self.target_concept, self.initial_relevance * k,
            self.r_x * k, self.r_h * k, self.r_c * k, self.r_c_tilde * k,
        )


def lrp_sequence(
    params: ModelParams,
    trace: ForwardTrace,
    target_timestep: int | None = None,
    target_concept: int = 0,
    config: LrpConfig = LrpConfig(),
    initial_relevance: float | None = None,
) -> RelevanceTrace:
    """Explain ``y_T[target_concept]`` in terms of the inputs x_1..x_T.

    ``target_timestep`` is 1-based and defaults to the last step. The
    initial relevance defaults to the predicted probability itself.
    """
    T_all = len(trace)
    T = T_all if target_timestep is None else int(target_timestep)
    if not 1 <= T <= T_all:
        raise ModelError(f"target_timestep {T} outside [1, {T_all}]")
    d = int(target_concept)
    if not 0 <= d < params.num_concepts:
        raise EncodingError(f"target concept {d} outside [0, {params.num_concepts})")
    if trace.x.shape[1] != params.input_size or trace.h.shape[1] != params.hidden_size:
        raise ModelError("trace dimensions do not match the model")

    H, X = params.hidden_size, params.input_size
    r_y = float(trace.y[T - 1, d]) if initial_relevance is None else float(initial_relevance)

    r_x = np.zeros((T, X))
    r_h = np.zeros((T + 1, H))
    r_c = np.zeros((T + 1, H))
    r_ct = np.zeros((T, H))

    h_T = trace.h[T]
    z_y = params.w_yh[d] @ h_T + params.b_y[d]
    r_h[T] = lrp_linear(h_T, params.w_yh[d], params.b_y[d], z_y, r_y, config)

    w_cand = np.hstack([params.w_ch, params.w_cx])
    for t in range(T, 0, -1):
        k = t - 1  # row of the per-step arrays
        # h_t = o_t * tanh(C_t): all of R_h goes to the cell
        to_cell, _ = lrp_gate(r_h[t])
        r_c[t] += to_cell
        r_forget, r_input = lrp_cell_split(
            trace.f[k], trace.c[t - 1], trace.i[k], trace.c_tilde[k], trace.c[t], r_c[t], config
        )
        r_c[t - 1] += lrp_gate(r_forget)[0]
        r_ct[k] = lrp_gate(r_input)[0]
        lower = np.concatenate([trace.h[t - 1], trace.x[k]])
        z_c = w_cand @ lower + params.b_c
        r_lower = lrp_linear_layer(lower, w_cand, params.b_c, z_c, r_ct[k], config)
        r_h[t - 1] = r_lower[:H]
        r_x[k] = r_lower[H:]
    # h_0 = C_0 = 0: with delta = 0 nothing is left at the initial state;
    # r_c[0] gets the h_0 share the same way later steps do
    r_c[0] += r_h[0]
    return RelevanceTrace(T, d, r_y, r_x, r_h, r_c, r_ct)


def question_relevances(rt: RelevanceTrace, seq: InteractionSequence | None = None):
    """``(timestep, question_id, relevance)`` per explained step."""
    r = rt.question_relevance
    out = []
    for k in range(rt.target_timestep):
        qid = seq.steps[k].question_id if seq is not None else k
        out.append((k + 1, qid, float(r[k])))
    return out


def explain(params: ModelParams, seq: InteractionSequence, target_concept: int, config: LrpConfig = LrpConfig()):
    """Forward the whole sequence and explain the next-question prediction."""
    trace = forward_sequence(params, seq)
    return trace, lrp_sequence(params, trace, None, target_concept, config)


def explanation_report(seq: InteractionSequence, rt: RelevanceTrace, config: LrpConfig, concept_labels=None) -> dict:
    label = (lambda c: concept_labels[c]) if concept_labels is not None else (lambda c: c)
    rows = []
    for (t, qid, r), step in zip(question_relevances(rt, seq), seq.steps):
        rows.append({
            "timestep": t,
            "question_id": qid if isinstance(qid, (int, str)) else str(qid),
            "concept_id": label(step.concept_id),
            "correct": bool(step.correct),
            "relevance": r,
        })
    return {
        "header": {
            "target_concept": label(rt.target_concept),
            "predicted_probability": rt.initial_relevance,
            "epsilon": config.epsilon,
            "delta": config.delta,
            "residual": rt.residual,
        },
        "relevances": rows,
    }
