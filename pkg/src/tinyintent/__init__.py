"""Lightweight on-device intent classification.

Character-CNN word features fused with word embeddings, an LSTM sentence
encoder and a softmax head, trained with hand-written kernels, shipped as an
int8-quantized single-file model.
"""

from .network import IntentPrediction, ModelConfig, ModelParameters, forward, init_parameters
from .store import InferenceEngine, ModelFile, load_for_inference, load_model, save_model
from .text import PipelineConfig, Vocabulary, encode_utterance
from .trainer import TrainConfig, evaluate, run_experiment, train_run

__version__ = "0.1.0"

__all__ = [
    "IntentPrediction", "ModelConfig", "ModelParameters", "forward", "init_parameters",
    "InferenceEngine", "ModelFile", "load_for_inference", "load_model", "save_model",
    "PipelineConfig", "Vocabulary", "encode_utterance",
    "TrainConfig", "evaluate", "run_experiment", "train_run",
]
