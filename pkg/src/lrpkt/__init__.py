"""Deep knowledge tracing with an LSTM, explained by epsilon-LRP."""

from .data import BktParams, ConceptVocab, Dataset, RawRecord, build_dataset, generate_synthetic, load_csv, split
from .lrp import LrpConfig, RelevanceTrace, explain, lrp_sequence, question_relevances
from .model import (
    ForwardTrace,
    Interaction,
    InteractionSequence,
    ModelConfig,
    ModelParams,
    forward_sequence,
    init_params,
    load_model,
    predict_next,
    save_model,
)
from .training import EvalMetrics, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BktParams", "ConceptVocab", "Dataset", "EvalMetrics", "ForwardTrace", "Interaction",
    "InteractionSequence", "LrpConfig", "ModelConfig", "ModelParams", "RawRecord", "RelevanceTrace",
    "TrainConfig", "build_dataset", "evaluate", "explain", "forward_sequence", "generate_synthetic",
    "init_params", "load_csv", "load_model", "lrp_sequence", "predict_next", "question_relevances",
    "save_model", "split", "train",
]
