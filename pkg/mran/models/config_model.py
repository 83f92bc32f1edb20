"""
Experiment configuration - every hyperparameter, data location and ablation switch of a run.

Defaults follow the published setup: alpha=0.2, lambda_d=1, lambda_a=0.001, lambda_u=0.1,
lambda_m=0.00001, Adam at 0.0001, batch size 8, dropout 0.4, feature widths 128/64 and
extractor hidden layers of 1000 and 500.
"""
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple
import os

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from mran.errors import ConfigError
from mran.models.ablation_variant import AblationVariant


def _env_path(name: str, fallback: Optional[str]) -> Optional[Path]:
    value = os.getenv(name, fallback)
    return Path(value) if value else None


class ExperimentConfig(BaseModel):
    """All knobs of one experiment; flag > config file > environment > default"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # Data
    data_dir: Optional[Path] = Field(default_factory=lambda: _env_path("MRAN_DATA_DIR", None), description="Corpus root with one directory per domain")
    synth: bool = Field(False, description="Use the synthetic generator instead of a corpus")
    domain_names: Optional[List[str]] = Field(None, description="Domains to load (default: every subdirectory)")
    vocab_size: int = Field(5000, ge=1)
    log_counts: bool = Field(False, description="Use log(1 + count) instead of raw counts")

    # Protocol
    seed: int = Field(1, ge=0)
    folds: int = Field(5, ge=3)
    repeats: int = Field(1, ge=1)
    max_epochs: int = Field(50, ge=0)
    patience: Optional[int] = Field(None, ge=1, description="Stop after this many epochs without validation gain")
    output_dir: Path = Field(default_factory=lambda: _env_path("MRAN_OUTPUT_DIR", "runs"))

    # Optimization
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-4, gt=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    grad_clip: Optional[float] = Field(None, gt=0.0)
    k_d: int = Field(5, ge=1, description="Discriminator steps per main step")

    # Objective
    alpha: float = Field(0.2, gt=0.0, description="Beta(alpha, alpha) mixup parameter")
    lambda_d: float = Field(1.0, ge=0.0)
    lambda_a: float = Field(0.001, ge=0.0)
    lambda_u: float = Field(0.1, ge=0.0)
    lambda_m: float = Field(0.00001, ge=0.0)
    ablate: List[AblationVariant] = Field(default_factory=list)
    per_pair_lambda: bool = False
    detach_consistency_target: bool = True

    # Architecture
    input_dim: Optional[int] = Field(None, ge=1, description="Extractor input width (derived from data when unset)")
    extractor_hidden: Tuple[int, ...] = (1000, 500)
    shared_dim: int = Field(128, ge=1)
    domain_dim: int = Field(64, ge=1)
    dropout: float = Field(0.4, ge=0.0, lt=1.0)

    # Synthetic corpus
    synth_domains: int = Field(4, ge=2)
    synth_labeled: int = Field(200, ge=5)
    synth_unlabeled: int = Field(400, ge=0)
    synth_dim: int = Field(64, ge=4)
    synth_shared_signal: float = Field(1.0, ge=0.0)
    synth_domain_shift: float = Field(1.0, ge=0.0)
    synth_noise: float = Field(1.0, ge=0.0)

    quiet: bool = False

    @field_validator("extractor_hidden", mode="before")
    @classmethod
    def _split_widths(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(int(part) for part in value.split(",") if part.strip())
        return value

    @field_validator("extractor_hidden")
    @classmethod
    def _check_widths(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(width < 1 for width in value):
            raise ValueError("needs at least one positive hidden width")
        return value

    @field_validator("ablate", "domain_names", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @classmethod
    def build(cls, *layers: Mapping[str, Any]) -> "ExperimentConfig":
        """Merge layers left to right (later wins) and validate, naming the offending key on failure"""
        merged: Dict[str, Any] = {}
        for layer in layers:
            merged.update({k: v for k, v in layer.items() if v is not None})
        for key in merged:
            if key not in cls.model_fields:
                raise ConfigError(f"unknown config key '{key}'")
        try:
            return cls(**merged)
        except ValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(part) for part in first["loc"]) or "config"
            raise ConfigError(f"invalid value for '{key}': {first['msg']}") from e

    def echo_lines(self) -> List[str]:
        """Every value as a `key = value` line, parseable by load_config_file"""
        lines = []
        for key in sorted(type(self).model_fields):
            lines.append(f"{key} = {_format_value(getattr(self, key))}")
        return lines


class LossWeights(BaseModel):
    """Weights of the four regularization terms; 0 disables a term"""
    lambda_d: float = Field(1.0, ge=0.0)
    lambda_a: float = Field(0.001, ge=0.0)
    lambda_u: float = Field(0.1, ge=0.0)
    lambda_m: float = Field(0.00001, ge=0.0)

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "LossWeights":
        weights = cls(
            lambda_d=config.lambda_d,
            lambda_a=config.lambda_a,
            lambda_u=config.lambda_u,
            lambda_m=config.lambda_m,
        )
        return weights.without(*config.ablate)

    def without(self, *variants: AblationVariant) -> "LossWeights":
        updates: Dict[str, float] = {}
        for variant in variants:
            if variant == AblationVariant.DM:
                updates["lambda_m"] = 0.0
            elif variant == AblationVariant.LCM:
                updates["lambda_a"] = 0.0
            elif variant == AblationVariant.UCM:
                updates["lambda_u"] = 0.0
            elif variant == AblationVariant.CM:
                updates["lambda_a"] = 0.0
                updates["lambda_u"] = 0.0
        return self.model_copy(update=updates)


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, AblationVariant):
        return value.value
    return str(value)


def load_config_file(path: Path) -> Dict[str, str]:
    """
    Parse `key = value` lines with `#` comments.

    Raises:
        ConfigError: malformed line or unknown key, naming the line
    """
    values: Dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ExperimentConfig.model_fields:
            raise ConfigError(f"{path}:{number}: unknown config key '{key}'")
        if value.lower() == "none":
            continue
        values[key] = value
    return values
