"""Multi-domain claim veracity toolkit.

Subpackages cover the full pipeline: corpus cleansing and splits,
evidence snippet retrieval, text/metadata featurization, a small
reverse-mode autodiff engine, joint evidence-ranking veracity models,
multi-task training, and the evaluation/ablation protocol.
"""

__version__ = "0.1.0"

from . import autograd, corpus, evidence, evaluation, features, model, train

__all__ = [
    "autograd",
    "corpus",
    "evidence",
    "evaluation",
    "features",
    "model",
    "train",
]
