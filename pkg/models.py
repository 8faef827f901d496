"""Pydantic models for the DACL trainer"""

import hashlib
import json
from datetime import datetime
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import (
    DEFAULT_ALPHA,
    DEFAULT_BATCH_SIZE,
    DEFAULT_C1_HIDDEN,
    DEFAULT_C2_HIDDEN,
    DEFAULT_DISC_HIDDEN,
    DEFAULT_DOMAIN_DIM,
    DEFAULT_EPOCHS,
    DEFAULT_EXTRACTOR_HIDDEN,
    DEFAULT_GAMMA,
    DEFAULT_LR,
    DEFAULT_SEED,
    DEFAULT_SHARED_DIM,
    SWEEP_VALUES,
)


class AblationEnum(str, Enum):
    NONE = "none"
    NO_D = "no-d"  # drop the domain discriminator
    NO_C2 = "no-c2"  # drop the second classifier and the discrepancy term


class OutputActivation(str, Enum):
    NONE = "none"
    RELU = "relu"
    SOFTMAX = "softmax"


class MlpSpec(BaseModel):
    """Shape of a fully connected ReLU network"""
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(..., ge=1)
    hidden_dims: Tuple[int, ...] = ()
    output_dim: int = Field(..., ge=1)
    output_activation: OutputActivation = OutputActivation.NONE

    @field_validator("hidden_dims")
    @classmethod
    def _positive_hidden(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(dim < 1 for dim in value):
            raise ValueError("hidden dims must be >= 1")
        return value

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


class HyperParams(BaseModel):
    """Loss weights: alpha on the separation regularizer, gamma on the domain-adversarial term"""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(DEFAULT_ALPHA, ge=0.0, allow_inf_nan=False)
    gamma: float = Field(DEFAULT_GAMMA, ge=0.0, allow_inf_nan=False)


class TrainConfig(BaseModel):
    """Resolved training configuration"""
    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={
            "example": {
                "alpha": 0.1,
                "gamma": 0.1,
                "lr": 0.0001,
                "batch_size": 8,
                "epochs": 50,
                "shared_dim": 128,
                "domain_dim": 64,
                "seed": 0,
                "ablation": "none",
            }
        },
    )

    alpha: float = Field(DEFAULT_ALPHA, ge=0.0, allow_inf_nan=False)
    gamma: float = Field(DEFAULT_GAMMA, ge=0.0, allow_inf_nan=False)
    lr: float = Field(DEFAULT_LR, gt=0.0, allow_inf_nan=False)
    batch_size: int = Field(DEFAULT_BATCH_SIZE, ge=1, description="Examples per domain per pool")
    epochs: int = Field(DEFAULT_EPOCHS, ge=0)
    shared_dim: int = Field(DEFAULT_SHARED_DIM, ge=1)
    domain_dim: int = Field(DEFAULT_DOMAIN_DIM, ge=1)
    extractor_hidden: Tuple[int, ...] = DEFAULT_EXTRACTOR_HIDDEN
    c1_hidden: int = Field(DEFAULT_C1_HIDDEN, ge=1)
    c2_hidden: int = Field(DEFAULT_C2_HIDDEN, ge=1)
    disc_hidden: int = Field(DEFAULT_DISC_HIDDEN, ge=1)
    seed: int = DEFAULT_SEED
    ablation: AblationEnum = AblationEnum.NONE
    binarize: bool = False
    validate_every: int = Field(1, ge=1, description="Epochs between validation passes")

    @field_validator("extractor_hidden", mode="before")
    @classmethod
    def _parse_hidden(cls, value):
        if isinstance(value, str):
            value = tuple(int(part) for part in value.replace(",", " ").split())
        return value

    @field_validator("extractor_hidden")
    @classmethod
    def _positive_hidden(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(dim < 1 for dim in value):
            raise ValueError("extractor hidden dims must be >= 1")
        return value

    @property
    def hyper(self) -> HyperParams:
        return HyperParams(alpha=self.alpha, gamma=self.gamma)

    @property
    def uses_discriminator(self) -> bool:
        return self.ablation != AblationEnum.NO_D

    @property
    def uses_second_classifier(self) -> bool:
        return self.ablation != AblationEnum.NO_C2

    def fingerprint(self) -> str:
        """Short stable hash of every resolved field"""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


class LossBundle(BaseModel):
    """Scalar objectives of one training iteration; None when a term is gated off"""
    lc1: Optional[float] = None
    lc2: Optional[float] = None
    lsep: Optional[float] = None
    ladv_d: Optional[float] = None
    ladv_u: Optional[float] = None

    def merged(self, other: "LossBundle") -> "LossBundle":
        """Fill unset terms from another bundle"""
        values = self.model_dump()
        for key, value in other.model_dump().items():
            if values[key] is None:
                values[key] = value
        return LossBundle(**values)


class StepReport(BaseModel):
    """One L/A/R iteration"""
    epoch: int
    step: int
    losses: LossBundle
    wall_ms: float = 0.0

    CSV_HEADER: ClassVar[Tuple[str, ...]] = ("epoch", "step", "lc1", "lc2", "lsep", "ladv_d", "ladv_u", "wall_ms")

    def csv_row(self) -> List[str]:
        terms = [self.losses.lc1, self.losses.lc2, self.losses.lsep, self.losses.ladv_d, self.losses.ladv_u]
        return [str(self.epoch), str(self.step), *("" if t is None else repr(t) for t in terms), f"{self.wall_ms:.3f}"]


class EpochSummary(BaseModel):
    """Validation accuracy after an epoch (epoch 0 = before training)"""
    epoch: int
    valid_accuracy: Optional[float] = None
    mean_losses: LossBundle = Field(default_factory=LossBundle)


class EvalReport(BaseModel):
    """Per-domain and average test accuracy of one run"""
    per_domain: Dict[str, float]
    average: float = Field(..., ge=0.0, le=1.0)
    config_fingerprint: str = ""
    seed: int = 0
    arm: str = "dacl"
    notes: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _accuracies_in_range(self):
        if not self.per_domain:
            raise ValueError("report needs at least one domain")
        for name, accuracy in self.per_domain.items():
            if not 0.0 <= accuracy <= 1.0:
                raise ValueError(f"accuracy for {name} outside [0, 1]: {accuracy}")
        return self

    @classmethod
    def from_accuracies(cls, per_domain: Dict[str, float], **kwargs) -> "EvalReport":
        average = sum(per_domain.values()) / len(per_domain) if per_domain else 0.0
        return cls(per_domain=per_domain, average=average, **kwargs)


class SweepParameter(str, Enum):
    ALPHA = "alpha"
    GAMMA = "gamma"


class SweepSpec(BaseModel):
    """Sensitivity sweep over one loss weight with the other held fixed"""
    parameter: SweepParameter = SweepParameter.ALPHA
    values: List[float] = Field(default_factory=lambda: list(SWEEP_VALUES), min_length=1)
    fixed_other: float = Field(0.1, ge=0.0)

    @field_validator("values")
    @classmethod
    def _positive_values(cls, value: List[float]) -> List[float]:
        if any(v <= 0 for v in value):
            raise ValueError("sweep values must be positive")
        return value


class SynthSpec(BaseModel):
    """Seeded multi-domain polarity-flip generator settings"""
    model_config = ConfigDict(frozen=True)

    domains: int = Field(3, ge=1)
    vocab_size: int = Field(500, ge=2)
    shared_signal_words: int = Field(10, ge=0, description="Words per shared polarity block")
    flipped_words: int = Field(20, ge=0, description="Words per domain-polarity block")
    labeled_per_domain: int = Field(100, ge=0)
    unlabeled_per_domain: int = Field(1000, ge=0)
    valid_per_domain: int = Field(100, ge=0)
    test_per_domain: int = Field(400, ge=0)
    noise_rate: float = Field(0.0, ge=0.0, le=0.5)
    signal_on_rate: float = Field(0.3, ge=0.0, le=1.0, description="P(word present) for the example's own polarity block")
    signal_off_rate: float = Field(0.05, ge=0.0, le=1.0, description="P(word present) for the opposite polarity block")
    background_rate: float = Field(0.02, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _roles_fit(self):
        if 2 * self.shared_signal_words + 2 * self.flipped_words > self.vocab_size:
            raise ValueError("signal word blocks do not fit in the vocabulary")
        return self

    @property
    def signal_word_count(self) -> int:
        return 2 * self.shared_signal_words + 2 * self.flipped_words

    def expected_density(self) -> float:
        """Expected fraction of non-zero columns per generated row"""
        background = (self.vocab_size - self.signal_word_count) * self.background_rate
        signal = (self.signal_word_count / 2) * (self.signal_on_rate + self.signal_off_rate)
        return (background + signal) / self.vocab_size


class RunManifest(BaseModel):
    """Everything needed to reproduce a run directory"""
    command: str
    config: TrainConfig
    dataset_manifest: Optional[str] = None
    output_dir: str
    seed: int
    folds: int = 1
    uda_target: Optional[str] = None
    uda_unlabeled: str = "withheld"
    sweep: Optional[SweepSpec] = None
    snapshot: Optional[str] = Field(None, description="Parameter snapshot scored by the eval command")
    threads: int = 1
    timestamp: datetime = Field(default_factory=datetime.utcnow)
