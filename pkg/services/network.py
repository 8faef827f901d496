"""
The five-network DACL architecture.

F_s (shared extractor), one F_d per domain, twin classifiers C_1 / C_2 over
concat(shared, domain) and a multinomial discriminator D over shared
features only. Parameters are plain float64 arrays grouped so each training
step can update a disjoint subset in place.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from errors import ContractError, DomainIndexError
from models import AblationEnum, MlpSpec, OutputActivation, TrainConfig
from . import autodiff as ad
from .autodiff import Tape, Value

logger = logging.getLogger(__name__)

NUM_CLASSES = 2

GROUP_SHARED = "shared"
GROUP_DOMAIN = "domain"
GROUP_C1 = "c1"
GROUP_C2 = "c2"
GROUP_DISC = "disc"
GROUP_NAMES = (GROUP_SHARED, GROUP_DOMAIN, GROUP_C1, GROUP_C2, GROUP_DISC)

# Sub-seed per network so omitting one (ablations) leaves the others' draws unchanged
_SUBSEED = {GROUP_SHARED: 1, GROUP_DOMAIN: 2, GROUP_C1: 3, GROUP_C2: 4, GROUP_DISC: 5}


class Mlp:
    """Weights and biases of one fully connected ReLU network"""

    def __init__(self, spec: MlpSpec, weights: List[np.ndarray], biases: List[np.ndarray]):
        if len(weights) != len(spec.layer_dims) or len(biases) != len(weights):
            raise ContractError(f"expected {len(spec.layer_dims)} layers, got {len(weights)} weights / {len(biases)} biases")
        for (fan_in, fan_out), w, b in zip(spec.layer_dims, weights, biases):
            if w.shape != (fan_in, fan_out) or b.shape != (1, fan_out):
                raise ContractError(f"layer shape {w.shape}/{b.shape} does not match spec {fan_in}->{fan_out}")
        self.spec = spec
        self.weights = weights
        self.biases = biases

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator) -> "Mlp":
        """He initialization: N(0, 2 / fan_in) weights, zero biases"""
        weights = []
        biases = []
        for fan_in, fan_out in spec.layer_dims:
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros((1, fan_out)))
        return cls(spec, weights, biases)

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.{layer}.weight", w
            yield f"{prefix}.{layer}.bias", b

    def forward(self, tape: Tape, x: Value) -> Value:
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, tape.bind(w)), tape.bind(b))
            if layer < last:
                h = ad.relu(h)
        if self.spec.output_activation == OutputActivation.RELU:
            h = ad.relu(h)
        elif self.spec.output_activation == OutputActivation.SOFTMAX:
            h = ad.rowsoftmax(h)
        return h

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


class ModelParams:
    """
    Parameter groups of the DACL model.

    The groups (shared, domain, c1, c2, disc) partition every trainable
    array; c2 is absent under the no-c2 ablation and disc under no-d.
    """

    def __init__(
        self,
        shared: Mlp,
        domain: List[Mlp],
        c1: Mlp,
        c2: Optional[Mlp] = None,
        disc: Optional[Mlp] = None,
        ablation: AblationEnum = AblationEnum.NONE,
    ):
        self.shared = shared
        self.domain = domain
        self.c1 = c1
        self.c2 = c2
        self.disc = disc
        self.ablation = ablation

    @property
    def num_domains(self) -> int:
        return len(self.domain)

    @property
    def input_dim(self) -> int:
        return self.shared.spec.input_dim

    @property
    def shared_dim(self) -> int:
        return self.shared.spec.output_dim

    @property
    def domain_dim(self) -> int:
        return self.domain[0].spec.output_dim

    def groups(self) -> Dict[str, List[np.ndarray]]:
        groups = {
            GROUP_SHARED: self.shared.parameters(),
            GROUP_DOMAIN: [p for extractor in self.domain for p in extractor.parameters()],
            GROUP_C1: self.c1.parameters(),
        }
        if self.c2 is not None:
            groups[GROUP_C2] = self.c2.parameters()
        if self.disc is not None:
            groups[GROUP_DISC] = self.disc.parameters()
        return groups

    def named_networks(self) -> Iterator[Tuple[str, Mlp]]:
        yield GROUP_SHARED, self.shared
        for m, extractor in enumerate(self.domain):
            yield f"{GROUP_DOMAIN}{m}", extractor
        yield GROUP_C1, self.c1
        if self.c2 is not None:
            yield GROUP_C2, self.c2
        if self.disc is not None:
            yield GROUP_DISC, self.disc

    def named_parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        for prefix, network in self.named_networks():
            yield from network.named_parameters(prefix)

    def copy(self) -> "ModelParams":
        return ModelParams(
            shared=self.shared.copy(),
            domain=[extractor.copy() for extractor in self.domain],
            c1=self.c1.copy(),
            c2=self.c2.copy() if self.c2 is not None else None,
            disc=self.disc.copy() if self.disc is not None else None,
            ablation=self.ablation,
        )

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Deep copy of every array keyed by name, for before/after comparisons"""
        return {name: array.copy() for name, array in self.named_parameters()}


@dataclass
class FeaturePair:
    shared: Value
    domain: Value

    def __post_init__(self):
        if self.shared.shape[0] != self.domain.shape[0]:
            raise ContractError(f"feature row mismatch: {self.shared.shape} vs {self.domain.shape}")

    @property
    def joint(self) -> Value:
        return ad.concat_cols(self.shared, self.domain)


@dataclass
class Prediction:
    labels: np.ndarray
    probabilities: np.ndarray


def network_specs(config: TrainConfig, input_dim: int, num_domains: int) -> Dict[str, MlpSpec]:
    joint_dim = config.shared_dim + config.domain_dim
    return {
        GROUP_SHARED: MlpSpec(
            input_dim=input_dim,
            hidden_dims=config.extractor_hidden,
            output_dim=config.shared_dim,
            output_activation=OutputActivation.RELU,
        ),
        GROUP_DOMAIN: MlpSpec(
            input_dim=input_dim,
            hidden_dims=config.extractor_hidden,
            output_dim=config.domain_dim,
            output_activation=OutputActivation.RELU,
        ),
        GROUP_C1: MlpSpec(
            input_dim=joint_dim,
            hidden_dims=(config.c1_hidden,),
            output_dim=NUM_CLASSES,
            output_activation=OutputActivation.SOFTMAX,
        ),
        GROUP_C2: MlpSpec(
            input_dim=joint_dim,
            hidden_dims=(config.c2_hidden,),
            output_dim=NUM_CLASSES,
            output_activation=OutputActivation.SOFTMAX,
        ),
        GROUP_DISC: MlpSpec(
            input_dim=config.shared_dim,
            hidden_dims=(config.disc_hidden,),
            output_dim=num_domains,
            output_activation=OutputActivation.SOFTMAX,
        ),
    }


def _rng(seed: int, group: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, _SUBSEED[group], index])


def init_params(config: TrainConfig, input_dim: int, num_domains: int, seed: Optional[int] = None) -> ModelParams:
    """
    Draw a fresh parameter set.

    Each network has its own sub-seed derived from (seed, network), so C_1
    and C_2 never start identical and ablation arms share every draw they
    have in common.
    """
    if num_domains < 1:
        raise ContractError(f"need at least one domain, got {num_domains}")
    seed = config.seed if seed is None else seed
    specs = network_specs(config, input_dim, num_domains)

    params = ModelParams(
        shared=Mlp.initialize(specs[GROUP_SHARED], _rng(seed, GROUP_SHARED)),
        domain=[Mlp.initialize(specs[GROUP_DOMAIN], _rng(seed, GROUP_DOMAIN, m)) for m in range(num_domains)],
        c1=Mlp.initialize(specs[GROUP_C1], _rng(seed, GROUP_C1)),
        c2=Mlp.initialize(specs[GROUP_C2], _rng(seed, GROUP_C2)) if config.uses_second_classifier else None,
        disc=Mlp.initialize(specs[GROUP_DISC], _rng(seed, GROUP_DISC)) if config.uses_discriminator else None,
        ablation=config.ablation,
    )
    logger.debug(f"Initialized {num_domains}-domain model (input {input_dim}, ablation {config.ablation.value}, seed {seed})")
    return params


def _as_input(tape: Tape, x: Union[np.ndarray, Value]) -> Value:
    return x if isinstance(x, Value) else tape.constant(x)


def extract(
    params: ModelParams,
    x: Union[np.ndarray, Value],
    domain: Optional[int],
    tape: Optional[Tape] = None,
    zero_domain: bool = False,
) -> FeaturePair:
    """
    Shared and domain-specific features of a batch.

    With zero_domain the domain block is a constant zero matrix and no
    domain extractor is read.
    """
    if tape is None:
        tape = x.tape if isinstance(x, Value) else Tape()
    x = _as_input(tape, x)
    shared = params.shared.forward(tape, x)
    if zero_domain:
        return FeaturePair(shared, tape.zeros(x.shape[0], params.domain_dim))
    if domain is None or not 0 <= domain < params.num_domains:
        raise DomainIndexError(f"domain index {domain} outside 0..{params.num_domains - 1}")
    return FeaturePair(shared, params.domain[domain].forward(tape, x))


def classify(params: ModelParams, features: FeaturePair, which: int) -> Value:
    """Row-stochastic class probabilities from C_1 (which=1) or C_2 (which=2)"""
    tape = features.shared.tape
    if which == 1:
        return params.c1.forward(tape, features.joint)
    if which == 2:
        if params.c2 is None:
            raise ContractError("second classifier is disabled by the no-c2 ablation")
        return params.c2.forward(tape, features.joint)
    raise ContractError(f"classifier must be 1 or 2, got {which}")


def discriminate(params: ModelParams, shared: Value) -> Value:
    """M-way domain probabilities from shared features only"""
    if params.disc is None:
        raise ContractError("discriminator is disabled by the no-d ablation")
    return params.disc.forward(shared.tape, shared)


def predict_test(
    params: ModelParams,
    x: np.ndarray,
    domain: Optional[int],
    zero_domain: bool = False,
) -> Prediction:
    """
    Test-time prediction: average of C_1 and C_2 probabilities, argmax label.

    np.argmax returns the first maximum, so ties go to class 0.
    """
    tape = Tape()
    features = extract(params, x, domain, tape=tape, zero_domain=zero_domain)
    probs = classify(params, features, 1).data
    if params.c2 is not None:
        probs = (probs + classify(params, features, 2).data) / 2.0
    return Prediction(labels=np.argmax(probs, axis=1), probabilities=probs)
