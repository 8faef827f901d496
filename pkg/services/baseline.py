"""
Shared-only MLP baseline.

One extractor with the F_s shape followed by one C_1-shaped classifier,
trained with cross-entropy on the pooled labeled data of the chosen domains.
It sees no domain identity, so it cannot separate domain-specific cues.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from errors import ConfigurationError, NumericalAbort
from models import MlpSpec, OutputActivation, TrainConfig
from . import autodiff as ad
from .autodiff import Tape
from .data import MultiDomainDataset, SparseExample, labels_of, to_dense_batch
from .losses import classification_loss
from .network import GROUP_C1, GROUP_SHARED, NUM_CLASSES, Mlp, _rng
from .optimizer import AdamState, adam_update
from .trainer import PoolSampler

logger = logging.getLogger(__name__)

SCORE_CHUNK = 512


@dataclass
class BaselineModel:
    extractor: Mlp
    classifier: Mlp

    def parameters(self) -> List[np.ndarray]:
        return self.extractor.parameters() + self.classifier.parameters()

    def copy(self) -> "BaselineModel":
        return BaselineModel(self.extractor.copy(), self.classifier.copy())

    def forward(self, tape: Tape, x: np.ndarray) -> ad.Value:
        return self.classifier.forward(tape, self.extractor.forward(tape, tape.constant(x)))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(Tape(), x).data, axis=1)


@dataclass
class BaselineResult:
    model: BaselineModel
    best_epoch: Optional[int] = None
    losses: List[float] = field(default_factory=list)


def init_baseline(config: TrainConfig, input_dim: int, seed: Optional[int] = None) -> BaselineModel:
    seed = config.seed if seed is None else seed
    extractor = MlpSpec(
        input_dim=input_dim,
        hidden_dims=config.extractor_hidden,
        output_dim=config.shared_dim,
        output_activation=OutputActivation.RELU,
    )
    classifier = MlpSpec(
        input_dim=config.shared_dim,
        hidden_dims=(config.c1_hidden,),
        output_dim=NUM_CLASSES,
        output_activation=OutputActivation.SOFTMAX,
    )
    return BaselineModel(
        Mlp.initialize(extractor, _rng(seed, GROUP_SHARED)),
        Mlp.initialize(classifier, _rng(seed, GROUP_C1)),
    )


def baseline_accuracy(model: BaselineModel, examples: Sequence[SparseExample], vocab_size: int, binarize: bool = False) -> float:
    if not examples:
        raise ConfigurationError("cannot score an empty pool")
    correct = 0
    for start in range(0, len(examples), SCORE_CHUNK):
        chunk = examples[start : start + SCORE_CHUNK]
        correct += int(np.sum(model.predict(to_dense_batch(chunk, vocab_size, binarize)) == labels_of(chunk)))
    return correct / len(examples)


def train_baseline(
    dataset: MultiDomainDataset,
    config: TrainConfig,
    domains: Optional[Iterable[int]] = None,
) -> BaselineResult:
    """
    Train on the pooled labeled examples of `domains` (all domains by default).

    Each iteration draws batch_size rows per source domain from the pool, so
    the baseline sees as many labeled rows per step as the full model. The
    parameters with the best pooled validation accuracy are kept when the
    source domains have validation pools.
    """
    domains = list(range(dataset.num_domains)) if domains is None else list(domains)
    pool = [example for m in domains for example in dataset.domains[m].labeled]
    valid = [example for m in domains for example in dataset.domains[m].valid]
    if not pool:
        raise ConfigurationError("baseline needs labeled examples in at least one source domain")

    batch_size = config.batch_size * len(domains)
    sampler = PoolSampler(len(pool), batch_size, np.random.default_rng([config.seed, len(domains), 7]))
    steps_per_epoch = math.ceil(len(pool) / batch_size)

    model = init_baseline(config, dataset.vocab_size)
    state = AdamState(model.parameters())
    result = BaselineResult(model=model)

    best_model, best_accuracy = model.copy(), -1.0
    if valid:
        best_accuracy = baseline_accuracy(model, valid, dataset.vocab_size, config.binarize)
        result.best_epoch = 0

    logger.info(f"Training shared-only baseline on {len(pool)} pooled examples from {len(domains)} domains")
    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for step in range(steps_per_epoch):
            picked = [pool[i] for i in sampler.next()]
            tape = Tape()
            loss = classification_loss(model.forward(tape, to_dense_batch(picked, dataset.vocab_size, config.binarize)), labels_of(picked))
            if not math.isfinite(loss.item()):
                raise NumericalAbort("baseline_lc", loss.item(), epoch, step)
            ad.backward(loss)
            adam_update(model.parameters(), [tape.grad_of(p) for p in model.parameters()], state, config.lr)
            epoch_losses.append(loss.item())
        result.losses.append(float(np.mean(epoch_losses)))

        if valid and (epoch % config.validate_every == 0 or epoch == config.epochs):
            accuracy = baseline_accuracy(model, valid, dataset.vocab_size, config.binarize)
            if accuracy > best_accuracy:
                best_model, best_accuracy, result.best_epoch = model.copy(), accuracy, epoch
        logger.debug(f"Baseline epoch {epoch}: loss {result.losses[-1]:.4f}")

    if valid:
        result.model = best_model
    return result
