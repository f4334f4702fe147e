from __future__ import annotations

import os
import tomllib
import typing
from collections.abc import Mapping
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator


SEED_ENV_VAR = "MCFA_SEED"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


# --- Enums ---


class Mode(str, Enum):
    B1 = "b1"
    B2 = "b2"
    MCFA = "mcfa"


class DataSource(str, Enum):
    CV = "cv"
    FIXED = "fixed"
    SYNTHETIC = "synthetic"


# --- Sub-Models ---


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(StrictModel):
    source: DataSource = DataSource.SYNTHETIC
    # The original-language view comes first, translations after it.
    views: list[str] = Field(default_factory=list)
    corpus: list[Path] = Field(default_factory=list)
    test_corpus: list[Path] = Field(default_factory=list)
    embeddings: dict[str, Path] = Field(default_factory=dict)
    cv_folds: int = Field(10, ge=2)
    # Which fold's test part `eval`/`analyze` read under CV.
    fold: int = Field(0, ge=0)
    use_views: list[str] = Field(default_factory=list)
    min_count: int = Field(1, ge=1)

    @field_validator("source", mode="before")
    @classmethod
    def case_insensitive_source(cls, v: Any) -> Any:
        if isinstance(v, str):
            return v.lower()
        return v


class ModelConfig(StrictModel):
    mode: Mode = Mode.MCFA
    windows: list[int] = Field(default_factory=lambda: [3, 4, 5])
    n_maps: int = Field(100, ge=1)
    d_word: int = Field(300, ge=1)
    static_embeddings: bool = False
    unknown_range: float = Field(0.25, gt=0)

    @field_validator("mode", mode="before")
    @classmethod
    def case_insensitive_mode(cls, v: Any) -> Any:
        if isinstance(v, str):
            return v.lower()
        return v

    @field_validator("windows")
    @classmethod
    def positive_windows(cls, v: list[int]) -> list[int]:
        if not v or any(h < 1 for h in v):
            raise ValueError("windows must be a non-empty list of positive sizes")
        return v


class TrainConfig(StrictModel):
    batch_size: int = Field(50, ge=1)
    dropout_rate: float = Field(0.5, ge=0.0, lt=1.0)
    max_norm_c: float = Field(3.0, gt=0.0)
    adadelta_rho: float = Field(0.95, gt=0.0, lt=1.0)
    adadelta_epsilon: float = Field(1e-6, gt=0.0)
    # Only used by mode b2.
    l2_lambda: float = Field(1e-4, ge=0.0)
    max_epochs: int = Field(50, ge=1)
    patience: int = Field(10, ge=1)
    seed: int = 0
    dev_fraction: float = Field(0.10, gt=0.0, lt=0.5)
    eval_batch_size: int = Field(200, ge=1)


class SyntheticConfig(StrictModel):
    n_views: int = Field(3, ge=1)
    view_names: list[str] = Field(default_factory=list)
    d_word: int = Field(300, ge=1)
    n_classes: int = Field(4, ge=2)
    n_examples: int = Field(2500, ge=2)
    n_test: int = Field(500, ge=1)
    # informative[k] lists the classes view k carries a signal for.
    # Empty means class c is informative in view c mod n_views.
    informative: list[list[int]] = Field(default_factory=list)
    noise_rate: float = Field(0.0, ge=0.0, le=1.0)
    view_noise_rates: list[float] = Field(default_factory=list)
    signal_tokens: int = Field(5, ge=1)
    filler_tokens: int = Field(30, ge=1)
    signal_rate: float = Field(0.4, gt=0.0, le=1.0)
    min_length: int = Field(4, ge=1)
    max_length: int = Field(12, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def check_shapes(self) -> SyntheticConfig:
        if self.view_names and len(self.view_names) != self.n_views:
            raise ValueError(f"view_names has {len(self.view_names)} entries for {self.n_views} views")
        if self.view_noise_rates and len(self.view_noise_rates) != self.n_views:
            raise ValueError("view_noise_rates needs one rate per view")
        if any(not 0.0 <= r <= 1.0 for r in self.view_noise_rates):
            raise ValueError("view_noise_rates must lie in [0, 1]")
        if self.min_length > self.max_length:
            raise ValueError("min_length exceeds max_length")
        if self.n_test >= self.n_examples:
            raise ValueError("n_test must leave training examples")
        return self

    def names(self) -> list[str]:
        if self.view_names:
            return list(self.view_names)
        return ["orig"] + [f"t{k}" for k in range(1, self.n_views)]

    def noise_rates(self) -> list[float]:
        return list(self.view_noise_rates) or [self.noise_rate] * self.n_views


class OutputConfig(StrictModel):
    dir: Path = Path("runs")
    # Folds trained concurrently under cross-validation.
    jobs: int = Field(1, ge=1)
    json_log_size: int = Field(500, ge=-1)


# --- Top Model ---


class RunConfig(StrictModel):
    data: DataConfig = Field(default_factory=lambda: DataConfig())
    model: ModelConfig = Field(default_factory=lambda: ModelConfig())
    train: TrainConfig = Field(default_factory=lambda: TrainConfig())
    synthetic: SyntheticConfig = Field(default_factory=lambda: SyntheticConfig())
    output: OutputConfig = Field(default_factory=lambda: OutputConfig())

    @model_validator(mode="after")
    def check_data_source(self) -> RunConfig:
        data = self.data
        if data.source is DataSource.SYNTHETIC:
            if data.corpus or data.test_corpus:
                raise ValueError("synthetic source takes no corpus files")
        else:
            if not data.views:
                raise ValueError(f"source {data.source.value} needs data.views")
            if len(data.corpus) != len(data.views):
                raise ValueError("data.corpus needs one file per view")
            if data.source is DataSource.FIXED:
                if len(data.test_corpus) != len(data.views):
                    raise ValueError("fixed source needs one data.test_corpus file per view")
            elif data.test_corpus:
                raise ValueError("data.test_corpus is only read by the fixed source")
            if data.source is DataSource.CV and data.fold >= data.cv_folds:
                raise ValueError(f"fold {data.fold} out of range for {data.cv_folds} folds")
            for path in [*data.corpus, *data.test_corpus]:
                if not path.exists():
                    raise ValueError(f"file not found: {path}")
        if data.source is DataSource.SYNTHETIC:
            if "d_word" not in self.synthetic.model_fields_set:
                self.synthetic.d_word = self.model.d_word
            elif self.synthetic.d_word != self.model.d_word:
                raise ValueError(
                    f"synthetic.d_word {self.synthetic.d_word} differs from model.d_word {self.model.d_word}"
                )
        names = self.view_names()
        for view, path in data.embeddings.items():
            if view not in names:
                raise ValueError(f"embeddings given for unknown view {view!r}")
            if not path.exists():
                raise ValueError(f"file not found: {path}")
        unknown = [v for v in data.use_views if v not in names]
        if unknown:
            raise ValueError(f"use_views names unknown views {unknown}")
        return self

    def view_names(self) -> list[str]:
        if self.data.source is DataSource.SYNTHETIC:
            return self.synthetic.names()
        return list(self.data.views)

    def active_views(self) -> list[str]:
        """Configured views in their configured order, restricted to ``use_views``."""
        chosen = set(self.data.use_views)
        return [v for v in self.view_names() if not chosen or v in chosen]


# --- Loading & overrides ---


_SECTIONS: dict[str, type[BaseModel]] = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "synthetic": SyntheticConfig,
    "output": OutputConfig,
}


# Bare keys that exist in more than one section.
_PREFERRED_OWNER = {"seed": "train", "d_word": "model"}


def _resolve_key(key: str) -> tuple[str, str]:
    key = key.replace("-", "_")
    if "." in key:
        section, name = key.split(".", 1)
        if section in _SECTIONS and name in _SECTIONS[section].model_fields:
            return section, name
        raise ConfigError(key, "unknown configuration key")
    owners = [s for s, model in _SECTIONS.items() if key in model.model_fields]
    if key in _PREFERRED_OWNER:
        return _PREFERRED_OWNER[key], key
    if not owners:
        raise ConfigError(key, "unknown configuration key")
    if len(owners) > 1:
        raise ConfigError(key, f"ambiguous key, use one of {[f'{s}.{key}' for s in owners]}")
    return owners[0], key


def _is_list_field(section: str, name: str) -> bool:
    annotation = _SECTIONS[section].model_fields[name].annotation
    return typing.get_origin(annotation) is list


def _parse_value(raw: str, as_list: bool) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        pass
    if as_list:
        return [_parse_value(part.strip(), False) for part in raw.split(",") if part.strip()]
    return raw


def apply_overrides(data: dict[str, Any], overrides: Mapping[str, str]) -> dict[str, Any]:
    """
    Returns a copy of the raw config with ``--key value`` overrides applied.

    Keys may be ``section.key`` or a bare key that belongs to one section.
    """
    merged = {section: dict(values) for section, values in data.items() if isinstance(values, dict)}
    merged.update({k: v for k, v in data.items() if not isinstance(v, dict)})
    for key, raw in overrides.items():
        section, name = _resolve_key(key)
        value = _parse_value(raw, _is_list_field(section, name))
        merged.setdefault(section, {})[name] = value
    return merged


def load_config(file_path: Path | None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    """
    Reads and validates a run configuration.

    Priority: command-line overrides, then the file, then ``MCFA_SEED`` for the
    seed, then model defaults.

    Raises:
        FileNotFoundError: if ``file_path`` is given and missing.
        ConfigError: on any unknown key or invalid value.
    """
    data: dict[str, Any] = {}
    if file_path is not None:
        if not file_path.exists():
            raise FileNotFoundError(f"Config file not found: {file_path}")
        with file_path.open("rb") as f:
            try:
                data = tomllib.load(f)
            except tomllib.TOMLDecodeError as ex:
                raise ConfigError(str(file_path), f"not valid TOML ({ex})") from ex

    overrides = dict(overrides or {})
    seed_given = any(k.replace("-", "_") in ("seed", "train.seed") for k in overrides)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None and not seed_given and "seed" not in data.get("train", {}):
        overrides["train.seed"] = env_seed

    merged = apply_overrides(data, overrides)
    try:
        return RunConfig(**merged)
    except ValidationError as ex:
        first = ex.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(key, first["msg"]) from ex
