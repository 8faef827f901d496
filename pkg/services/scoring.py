"""Accuracy of a parameter set on labeled pools"""

from typing import Sequence

import numpy as np

from errors import ConfigurationError
from .data import SparseExample, labels_of, to_dense_batch
from .network import ModelParams, predict_test

# Rows per forward pass when scoring large pools
SCORE_CHUNK = 512


def pool_accuracy(
    params: ModelParams,
    examples: Sequence[SparseExample],
    domain: int,
    vocab_size: int,
    binarize: bool = False,
    zero_domain: bool = False,
) -> float:
    """Fraction of examples whose averaged-classifier label matches the gold label"""
    if not examples:
        raise ConfigurationError(f"cannot score an empty pool for domain {domain}")
    correct = 0
    for start in range(0, len(examples), SCORE_CHUNK):
        chunk = examples[start : start + SCORE_CHUNK]
        x = to_dense_batch(chunk, vocab_size, binarize)
        prediction = predict_test(params, x, domain, zero_domain=zero_domain)
        correct += int(np.sum(prediction.labels == labels_of(chunk)))
    return correct / len(examples)
