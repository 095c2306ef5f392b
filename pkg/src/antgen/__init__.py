"""Adversarial non-autoregressive text generation on a small numpy autodiff core."""

from .data import Vocab, build_vocab, mask_corpus, toy_conditional_grammar, toy_grammar
from .model import ANT, ModelConfig, generate, interpolate
from .tensor import Tensor, backward, grad
from .training import AdversarialTrainer, TrainSchedule, pretrain_aligner

__version__ = "0.1.0"

__all__ = [
    "ANT",
    "AdversarialTrainer",
    "ModelConfig",
    "Tensor",
    "TrainSchedule",
    "Vocab",
    "backward",
    "build_vocab",
    "generate",
    "grad",
    "interpolate",
    "mask_corpus",
    "pretrain_aligner",
    "toy_conditional_grammar",
    "toy_grammar",
]
