"""Selective online personalization of a streaming window classifier.

A pretrained model watches a multichannel stream window by window, asks an
oracle for labels only on uncertain or positive windows, and fine-tunes from a
class-aware replay buffer once enough of them have piled up.
"""

from .buffer import BufferEntry, ReplayBuffer
from .engine import AnnotationOracle, EngineConfig, RunResult, run
from .errors import InvalidConfigError, InvalidInputError, StreamAdaptError, TrainingDivergedError
from .model import Architecture, BlockSpec, Classifier, entropy, predict_label, softmax
from .scoring import MetricsReport, ScoringConfig, score_predictions
from .signal import EventInterval, SampleBlock, StreamSpec, Window, WindowedStream, synthesize
from .trainer import TrainConfig, fine_tune

__version__ = "0.1.0"

__all__ = [
    "AnnotationOracle", "Architecture", "BlockSpec", "BufferEntry", "Classifier",
    "EngineConfig", "EventInterval", "InvalidConfigError", "InvalidInputError",
    "MetricsReport", "ReplayBuffer", "RunResult", "SampleBlock", "ScoringConfig",
    "StreamAdaptError", "StreamSpec", "TrainConfig", "TrainingDivergedError", "Window",
    "WindowedStream", "entropy", "fine_tune", "predict_label", "run", "score_predictions",
    "softmax", "synthesize",
]
