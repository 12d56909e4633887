"""
Typed run definitions.

A run is described by one TOML document with the sections below. Values are
layered CLI flags > ``META_PROMPTING_*`` environment variables > file >
defaults; nested keys in the environment use ``__``
(``META_PROMPTING_META__ALGORITHM=fomaml``).
"""

import logging
from contextvars import ContextVar
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from meta_prompting.models.exceptions import ConfigError

logger = logging.getLogger(__name__)

Algorithm = Literal["maml", "fomaml", "reptile", "mslb"]
InitMode = Literal["random", "pretrain", "meta"]
PartitionName = Literal["backbone", "prompt"]

DEFAULT_TEMPLATE = "[CLS] {soft:2} {x} {soft:1} the topic is [MASK] [SEP]"
DEFAULT_SUITE_TEMPLATES = [
    DEFAULT_TEMPLATE,
    "[CLS] {x} {soft:3} [MASK] [SEP]",
    "[CLS] {soft:1} {x} category : [MASK] {soft:2} [SEP]",
]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class GeneratorConfig(_Section):
    num_labels: int = Field(24, ge=1)
    examples_per_label: int = Field(40, ge=1)
    background_words: int = Field(60, ge=0)
    topic_words: int = Field(6, ge=0)
    topic_rate: float = Field(0.6, ge=0.0, le=1.0)
    overlap: float = Field(0.5, ge=0.0, le=1.0)
    min_length: int = Field(8, ge=1)
    max_length: int = Field(12, ge=1)
    seed: int = Field(7, ge=0)
    domain: str = "synthetic"

    @model_validator(mode="after")
    def _lengths(self):
        if self.max_length < self.min_length:
            raise ValueError("max_length must be >= min_length")
        return self


class CorpusConfig(_Section):
    source: Literal["synthetic", "jsonl"] = "synthetic"
    path: Optional[str] = None
    max_vocab: Optional[int] = Field(None, ge=1)
    min_freq: int = Field(1, ge=1)
    lowercase: bool = True
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)

    @model_validator(mode="after")
    def _path_for_jsonl(self):
        if self.source == "jsonl" and not self.path:
            raise ValueError("a jsonl corpus needs a path")
        return self


class SplitConfig(_Section):
    train_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    val_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    test_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    train_labels: Optional[list[str]] = None
    val_labels: Optional[list[str]] = None
    test_labels: Optional[list[str]] = None
    seed: int = Field(11, ge=0)

    @model_validator(mode="after")
    def _explicit_lists(self):
        given = [x is not None for x in (self.train_labels, self.val_labels, self.test_labels)]
        if any(given) and not all(given):
            raise ValueError("explicit label lists need all of train_labels, val_labels, test_labels")
        if self.train_fraction + self.val_fraction + self.test_fraction > 1.0 + 1e-9:
            raise ValueError("split fractions sum to more than 1")
        return self


class TaskConfig(_Section):
    way: int = Field(5, ge=1)
    shot: int = Field(1, ge=1)
    # None: five times the shot, capped at what the corpus can provide
    query: Optional[int] = Field(None, ge=1)


class ModelConfig(_Section):
    template: str = DEFAULT_TEMPLATE
    embed_dim: int = Field(16, ge=1)
    hidden_dim: int = Field(32, ge=1)
    depth: int = Field(1, ge=1, le=2)
    encoder_hidden: int = Field(8, ge=1)
    max_seq_len: int = Field(32, ge=4)
    init_seed: int = Field(3, ge=0)
    freeze_backbone: bool = True
    pretrain_steps: int = Field(300, ge=0)
    pretrain_lr: float = Field(1e-2, gt=0.0)
    pretrain_batch_size: int = Field(32, ge=1)


class InnerConfig(_Section):
    steps: int = Field(1, ge=1)
    lr: float = Field(0.5, ge=0.0, allow_inf_nan=False)
    partitions: list[PartitionName] = Field(default_factory=lambda: ["prompt"])
    batch_size: Optional[int] = Field(None, ge=1)

    @field_validator("partitions")
    @classmethod
    def _nonempty(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("at least one partition must adapt")
        return sorted(set(value))


class MetaConfig(_Section):
    algorithm: Algorithm = "maml"
    optimizer: Literal["adamw", "sgd"] = "adamw"
    lr_backbone: float = Field(1e-3, ge=0.0)
    lr_prompt: float = Field(5e-3, ge=0.0)
    weight_decay: float = Field(0.1, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    schedule: Literal["constant", "linear"] = "constant"
    warmup_steps: int = Field(0, ge=0)
    meta_batch_size: int = Field(4, ge=1)
    mslb_weights: Optional[list[float]] = None
    mslb_anneal_epochs: int = Field(0, ge=0)
    reptile_epsilon: float = Field(1.0, gt=0.0, le=1.0)
    reptile_use_query: bool = False

    @field_validator("mslb_weights")
    @classmethod
    def _weights(cls, value: Optional[list[float]]) -> Optional[list[float]]:
        if value is None:
            return value
        if any(w < 0 for w in value) or sum(value) <= 0:
            raise ValueError("MSLB weights must be non-negative with a positive sum")
        return value


class TrainConfig(_Section):
    train_episodes: int = Field(1000, ge=1)
    val_episodes: int = Field(250, ge=1)
    episodes_per_epoch: int = Field(20, ge=1)
    max_epochs: int = Field(30, ge=1)
    patience: int = Field(10, ge=1)
    pretrain_init_steps: int = Field(100, ge=0)
    pretrain_init_lr: float = Field(5e-2, gt=0.0)
    pretrain_init_batch_size: int = Field(16, ge=1)


class EvaluationConfig(_Section):
    test_episodes: int = Field(200, ge=1)
    adaptation_epochs: int = Field(15, ge=1)
    batch_size: int = Field(16, ge=1)
    lr: Optional[float] = Field(None, ge=0.0)


class RunSection(_Section):
    seed: int = Field(0, ge=0)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    out_dir: str = "runs/default"
    init: InitMode = "meta"
    workers: int = Field(1, ge=1)
    check_finite: bool = False


class SuiteConfig(_Section):
    templates: list[str] = Field(default_factory=lambda: list(DEFAULT_SUITE_TEMPLATES))
    perturbed_templates: int = Field(0, ge=0)
    perturb_rate: float = Field(0.5, ge=0.0, le=1.0)
    init_modes: list[InitMode] = Field(default_factory=lambda: ["random", "pretrain", "meta"])
    algorithms: list[Algorithm] = Field(default_factory=lambda: ["maml", "fomaml", "reptile", "mslb"])
    settings: list[tuple[int, int]] = Field(default_factory=lambda: [(5, 1)])
    transfer_overlap: Optional[float] = Field(None, ge=0.0, le=1.0)
    transfer_seed: int = Field(101, ge=0)


_file_layer: ContextVar[dict[str, Any]] = ContextVar("meta_prompting_file_layer", default={})


class _FileLayerSource(PydanticBaseSettingsSource):
    """Settings source serving the values read from the run's TOML file."""

    def get_field_value(self, field: FieldInfo, field_name: str) -> tuple[Any, str, bool]:
        return _file_layer.get().get(field_name), field_name, False

    def __call__(self) -> dict[str, Any]:
        return {k: v for k, v in _file_layer.get().items() if k in self.settings_cls.model_fields}


class RunConfig(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="META_PROMPTING_",
        env_nested_delimiter="__",
        frozen=True,
        extra="forbid",
    )

    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    inner: InnerConfig = Field(default_factory=InnerConfig)
    meta: MetaConfig = Field(default_factory=MetaConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    test: EvaluationConfig = Field(default_factory=EvaluationConfig)
    run: RunSection = Field(default_factory=RunSection)
    suite: SuiteConfig = Field(default_factory=SuiteConfig)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, env_settings, _FileLayerSource(settings_cls)

    @classmethod
    def from_layers(
        cls,
        file_data: Optional[dict[str, Any]] = None,
        overrides: Optional[dict[str, Any]] = None,
    ) -> "RunConfig":
        """
        Build a validated config from file values and (dotted-key) overrides.

        :raises ConfigError: naming the dotted key path of the first invalid value
        """
        unknown = set(file_data or {}) - set(cls.model_fields)
        if unknown:
            first = sorted(unknown)[0]
            raise ConfigError(f"unknown section '{first}'", key_path=first)
        token = _file_layer.set(dict(file_data or {}))
        try:
            return cls(**nest_overrides(overrides or {}))
        except ValidationError as e:
            raise config_error_from(e) from e
        finally:
            _file_layer.reset(token)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """A copy with dotted-key values replaced, re-validated, environment ignored."""
        data = deep_merge(self.model_dump(), nest_overrides(overrides))
        try:
            return _validate_plain(data)
        except ValidationError as e:
            raise config_error_from(e) from e

    def resolved(self) -> dict[str, Any]:
        """Every effective value, as plain TOML/JSON-compatible data."""
        return self.model_dump(mode="json")

    def effective_query(self, available: Optional[int] = None) -> int:
        query = self.task.query if self.task.query is not None else 5 * self.task.shot
        if available is not None:
            query = min(query, available - self.task.shot)
        return max(query, 1)

    def effective_mslb_weights(self) -> list[float]:
        steps = self.inner.steps
        weights = self.meta.mslb_weights or [1.0] * steps
        total = float(sum(weights))
        return [w / total for w in weights]


class _PlainRunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    corpus: CorpusConfig
    split: SplitConfig
    task: TaskConfig
    model: ModelConfig
    inner: InnerConfig
    meta: MetaConfig
    train: TrainConfig
    test: EvaluationConfig
    run: RunSection
    suite: SuiteConfig


def _validate_plain(data: dict[str, Any]) -> RunConfig:
    plain = _PlainRunConfig.model_validate(data)
    # Environment is not consulted again: values are already layered.
    return RunConfig.model_construct(**{name: getattr(plain, name) for name in RunConfig.model_fields})


def nest_overrides(overrides: dict[str, Any]) -> dict[str, Any]:
    """``{"meta.algorithm": "fomaml"}`` -> ``{"meta": {"algorithm": "fomaml"}}``; None values are dropped."""
    nested: dict[str, Any] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = nested
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value
    return nested


def deep_merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def config_error_from(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    key_path = ".".join(str(part) for part in first.get("loc", ()))
    return ConfigError(first.get("msg", str(error)), key_path=key_path or None)


def default_sections() -> dict[str, Any]:
    """Default values of every section, as written to a fresh config file."""
    return {
        name: field.get_default(call_default_factory=True).model_dump(mode="json")
        for name, field in RunConfig.model_fields.items()
    }


def check_consistency(config: RunConfig) -> None:
    """Cross-section rules that single fields cannot express."""
    weights = config.meta.mslb_weights
    if weights is not None and len(weights) != config.inner.steps:
        raise ConfigError(
            f"{len(weights)} MSLB weights given for {config.inner.steps} inner steps",
            key_path="meta.mslb_weights",
        )
    if config.model.freeze_backbone and "backbone" in config.inner.partitions:
        raise ConfigError("backbone cannot adapt while frozen", key_path="inner.partitions")
    for n, k in config.suite.settings:
        if n < 1 or k < 1:
            raise ConfigError(f"invalid N/K setting ({n}, {k})", key_path="suite.settings")
