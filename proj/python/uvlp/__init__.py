"""Python bindings for the uvlp library.

Scenes are passed as the JSON record strings used in dataset files.
"""

import json

from ._core import (
    CheckpointError,
    ConfigError,
    Error,
    Model,
    ShapeError,
    bleu4,
    default_grammar_json,
    finetune_caption,
    generate,
    grad_check,
    pretrain,
    qa_accuracy,
    vocab_words,
)


def default_grammar():
    return json.loads(default_grammar_json())


def train_config(**fields):
    """JSON text for the training functions; model fields go under "model"."""
    return json.dumps(fields)


__all__ = [
    "CheckpointError",
    "ConfigError",
    "Error",
    "Model",
    "ShapeError",
    "bleu4",
    "default_grammar",
    "finetune_caption",
    "generate",
    "grad_check",
    "pretrain",
    "qa_accuracy",
    "train_config",
    "vocab_words",
]
