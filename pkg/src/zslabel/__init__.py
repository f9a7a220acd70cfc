"""Zero-shot token labeling from sentence-level classifiers.

Train a small transformer sentence classifier, then read token-level
labels out of it four ways: soft attention gates, sharpness-weighted
soft attention, attention-head averaging, and perturbation-based
surrogate weights, with a shared evaluation harness.
"""

from .data import LabeledSentence, SynthConfig, Vocab, generate_synthetic, load_tsv
from .encoder import EncoderConfig, EncoderOutput
from .evaluate import MetricsReport, token_map, token_prf
from .headscore import HeadId, tune_threshold
from .lime import LimeConfig
from .model import SentenceModel
from .scores import ImportanceScores, ScoreFile
from .softattn import HeadConfig, SoftAttnForward
from .tensor import Rng, Tape, Tensor, backward
from .train import TrainConfig, train_model

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "EncoderOutput",
    "HeadConfig",
    "HeadId",
    "ImportanceScores",
    "LabeledSentence",
    "LimeConfig",
    "MetricsReport",
    "Rng",
    "ScoreFile",
    "SentenceModel",
    "SoftAttnForward",
    "SynthConfig",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Vocab",
    "backward",
    "generate_synthetic",
    "load_tsv",
    "token_map",
    "token_prf",
    "train_model",
    "tune_threshold",
]
