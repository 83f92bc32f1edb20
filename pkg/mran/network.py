"""
Network - the four components of the shared/private adversarial architecture.

    F_s      shared extractor           input -> hidden... -> shared_dim
    F_d^i    one private extractor per domain, input -> hidden... -> domain_dim
    D        multinomial discriminator   shared_dim -> shared_dim -> M (log-probs)
    C        classifier                  shared_dim+domain_dim -> same -> 2 (log-probs)

Domain indices are 0-based throughout the package.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from mran.autodiff import Tensor, add_bias, concat, dropout, log_softmax, matmul, no_grad, relu
from mran.errors import ConfigError, DimensionError, UsageError
from mran.models.config_model import ExperimentConfig

NUM_CLASSES = 2


class ModelSpec(BaseModel):
    """Widths and dropout of every component"""
    input_dim: int = Field(5000, ge=1)
    extractor_hidden: Tuple[int, ...] = (1000, 500)
    shared_dim: int = Field(128, ge=1)
    domain_dim: int = Field(64, ge=1)
    dropout: float = Field(0.4, ge=0.0, lt=1.0)

    @classmethod
    def from_config(cls, config: ExperimentConfig, input_dim: Optional[int] = None) -> "ModelSpec":
        width = config.input_dim or input_dim
        if width is None:
            raise ConfigError("input_dim is unknown: set it in the config or derive it from the data")
        return cls(
            input_dim=width,
            extractor_hidden=config.extractor_hidden,
            shared_dim=config.shared_dim,
            domain_dim=config.domain_dim,
            dropout=config.dropout,
        )


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input, hidden..., output); relu + dropout after every hidden layer"""
    widths: Tuple[int, ...]
    dropout: float

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ConfigError(f"an MLP needs at least one hidden layer, got widths {self.widths}")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"MLP widths must be positive, got {self.widths}")


class Mlp:
    def __init__(self, spec: MlpSpec, prefix: str, rng: np.random.Generator):
        self.spec = spec
        self.prefix = prefix
        self.layers: List[Tuple[Tensor, Tensor]] = []
        for index, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=f"{prefix}.{index}.weight")
            bias = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{prefix}.{index}.bias")
            self.layers.append((weight, bias))

    @property
    def input_dim(self) -> int:
        return self.spec.widths[0]

    @property
    def output_dim(self) -> int:
        return self.spec.widths[-1]

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for weight, bias in self.layers:
            params[weight.name] = weight
            params[bias.name] = bias
        return params

    def forward(self, x: Tensor, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
        if x.values.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"{self.prefix}: expected input of width {self.input_dim}, got shape {x.shape}")
        if training and self.spec.dropout > 0.0 and rng is None:
            raise UsageError(f"{self.prefix}: training-mode forward needs a dropout rng")
        h = x
        last = len(self.layers) - 1
        for index, (weight, bias) in enumerate(self.layers):
            h = add_bias(matmul(h, weight), bias)
            if index < last:
                h = dropout(relu(h), self.spec.dropout, training, rng)
        return h


class MranModel:
    """Parameter container for F_s, {F_d^i}, D and C"""

    def __init__(self, spec: ModelSpec, num_domains: int, rng: np.random.Generator):
        if num_domains < 2:
            raise ConfigError(f"need at least 2 domains, got {num_domains}")
        self.spec = spec
        self.num_domains = num_domains
        extractor = (spec.input_dim, *spec.extractor_hidden)
        self.shared_extractor = Mlp(MlpSpec((*extractor, spec.shared_dim), spec.dropout), "shared", rng)
        self.domain_extractors = [
            Mlp(MlpSpec((*extractor, spec.domain_dim), spec.dropout), f"domain.{i}", rng)
            for i in range(num_domains)
        ]
        self.discriminator = Mlp(
            MlpSpec((spec.shared_dim, spec.shared_dim, num_domains), spec.dropout), "discriminator", rng
        )
        joint = spec.shared_dim + spec.domain_dim
        self.classifier = Mlp(MlpSpec((joint, joint, NUM_CLASSES), spec.dropout), "classifier", rng)

    def components(self) -> Dict[str, Mlp]:
        """One entry per independently optimized component"""
        parts = {"shared": self.shared_extractor}
        parts.update({f"domain.{i}": mlp for i, mlp in enumerate(self.domain_extractors)})
        parts["discriminator"] = self.discriminator
        parts["classifier"] = self.classifier
        return parts

    def parameters(self, component: Optional[str] = None) -> Dict[str, Tensor]:
        if component is not None:
            parts = self.components()
            if component not in parts:
                raise UsageError(f"unknown component '{component}'")
            return parts[component].parameters()
        params: Dict[str, Tensor] = {}
        for mlp in self.components().values():
            params.update(mlp.parameters())
        return params

    def feature_parameters(self) -> Dict[str, Tensor]:
        """Everything the main step updates: F_s, every F_d^i and C"""
        return {k: v for k, v in self.parameters().items() if not k.startswith("discriminator.")}

    def zero_grad(self):
        for param in self.parameters().values():
            param.zero_grad()

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: param.values.copy() for name, param in self.parameters().items()}

    def restore(self, snapshot: Dict[str, np.ndarray]):
        params = self.parameters()
        if set(snapshot) != set(params):
            raise UsageError("snapshot does not match the model's parameter names")
        for name, values in snapshot.items():
            if values.shape != params[name].shape:
                raise DimensionError(f"snapshot '{name}' has shape {values.shape}, expected {params[name].shape}")
            params[name].values[...] = values

    def check_domain(self, domain: int):
        if not 0 <= domain < self.num_domains:
            raise UsageError(f"domain index {domain} out of range for {self.num_domains} domains")


def init_model(num_domains: int, spec: Optional[ModelSpec] = None, rng: Optional[np.random.Generator] = None, seed: int = 0) -> MranModel:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases; deterministic given the rng"""
    return MranModel(spec or ModelSpec(), num_domains, rng if rng is not None else np.random.default_rng(seed))


def _as_input(x: Union[Tensor, np.ndarray]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def forward_shared(model: MranModel, x: Union[Tensor, np.ndarray], training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    return model.shared_extractor.forward(_as_input(x), training, rng)


def forward_domain(model: MranModel, domain: int, x: Union[Tensor, np.ndarray], training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    model.check_domain(domain)
    return model.domain_extractors[domain].forward(_as_input(x), training, rng)


def forward_classifier(model: MranModel, shared: Tensor, domain_feat: Tensor, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if shared.shape[-1] != model.spec.shared_dim or domain_feat.shape[-1] != model.spec.domain_dim:
        raise DimensionError(
            f"classifier expects widths {model.spec.shared_dim} and {model.spec.domain_dim}, "
            f"got {shared.shape} and {domain_feat.shape}"
        )
    return log_softmax(model.classifier.forward(concat(shared, domain_feat), training, rng))


def forward_discriminator(model: MranModel, shared: Tensor, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    return log_softmax(model.discriminator.forward(shared, training, rng))


def class_log_probs(model: MranModel, domain: int, x: Union[Tensor, np.ndarray], training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """log C(F^i(x)) with F^i(x) = [F_s(x); F_d^i(x)]"""
    x = _as_input(x)
    return forward_classifier(
        model,
        forward_shared(model, x, training, rng),
        forward_domain(model, domain, x, training, rng),
        training,
        rng,
    )


def predict(model: MranModel, domain: int, x: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Eval-mode argmax over the class log-probs; ties go to class 0"""
    with no_grad():
        log_probs = class_log_probs(model, domain, x, training=False)
    return np.argmax(log_probs.values, axis=1)


def predict_domain(model: MranModel, x: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Eval-mode argmax of D over the shared features"""
    with no_grad():
        log_probs = forward_discriminator(model, forward_shared(model, x, training=False), training=False)
    return np.argmax(log_probs.values, axis=1)


def domain_accuracy(model: MranModel, inputs: Sequence[np.ndarray]) -> float:
    """Fraction of instances D assigns to their true domain; inputs[i] holds domain i's rows"""
    correct = total = 0
    for domain, x in enumerate(inputs):
        if len(x) == 0:
            continue
        correct += int((predict_domain(model, x) == domain).sum())
        total += len(x)
    if total == 0:
        raise UsageError("domain_accuracy needs at least one instance")
    return correct / total
