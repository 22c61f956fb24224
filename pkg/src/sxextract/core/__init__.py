"""sxextract core configuration.

Contains the configuration dataclasses, named presets and the
config-file loader shared by every service and the CLI.

This module provides:
- One frozen dataclass per configuration concern
- Named presets (``paper``, ``desk``, ``testing``)
- TOML loading with flag overrides and a stable config hash
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from sxextract.core.errors import ConfigError

Pooling = Literal["mean", "sum", "final_state"]
InputUnit = Literal["turn", "window"]
ScheduleShape = Literal["linear", "exponential", "inverse_sigmoid"]
ModelType = Literal["sat", "seq2seq", "baseline_crossproduct", "baseline_bodysystem"]
DType = Literal["float64", "float32"]

MODEL_TYPES: tuple[str, ...] = ("sat", "seq2seq", "baseline_crossproduct", "baseline_bodysystem")


def _check_rate(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


def _check_positive(name: str, value: int | float) -> None:
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class NoiseConfig:
    """Variational weight noise, active only on training forward passes."""

    weight_noise_std: float = 0.0
    rng_seed: int = 0

    def validate(self) -> None:
        if self.weight_noise_std < 0:
            raise ConfigError(f"weight_noise_std must be >= 0, got {self.weight_noise_std}")


@dataclass(frozen=True)
class CurriculumSchedule:
    """Probability of feeding gold span locations to the attribute heads."""

    p_start: float = 1.0
    p_end: float = 0.1
    decay_steps: int = 1000
    shape: ScheduleShape = "linear"

    def validate(self) -> None:
        if not 1.0 >= self.p_start >= self.p_end >= 0.0:
            raise ConfigError(f"need 1 >= p_start >= p_end >= 0, got p_start={self.p_start}, p_end={self.p_end}")
        _check_positive("decay_steps", self.decay_steps)
        if self.shape not in ("linear", "exponential", "inverse_sigmoid"):
            raise ConfigError(f"unknown curriculum shape {self.shape!r}")


@dataclass(frozen=True)
class SatConfig:
    """Span-attribute tagger hyperparameters; defaults are the tuned values."""

    word_emb_dim: int = 256
    lstm_hidden: int = 1024
    enc_layers: int = 1
    ff_dim: int = 256
    dropout: float = 0.4
    l2: float = 1e-4
    weight_noise_std: float = 1e-3
    alpha: float = 0.01
    learning_rate: float = 1e-2
    pooling: Pooling = "mean"
    input_unit: InputUnit = "turn"
    window_turns: int = 1
    curriculum: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    # when positive, decay_steps becomes curriculum_epochs x steps per epoch
    curriculum_epochs: int = 10
    batch_size: int = 8
    epochs: int = 30
    dtype: DType = "float64"

    def validate(self) -> None:
        for name in ("word_emb_dim", "lstm_hidden", "enc_layers", "ff_dim", "window_turns", "batch_size", "epochs"):
            _check_positive(name, getattr(self, name))
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        _check_positive("alpha", self.alpha)
        _check_positive("learning_rate", self.learning_rate)
        if self.l2 < 0 or self.weight_noise_std < 0:
            raise ConfigError("l2 and weight_noise_std must be >= 0")
        if self.pooling not in ("mean", "sum", "final_state"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.input_unit not in ("turn", "window"):
            raise ConfigError(f"unknown input_unit {self.input_unit!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"unknown dtype {self.dtype!r}")
        if self.curriculum_epochs < 0:
            raise ConfigError(f"curriculum_epochs must be >= 0, got {self.curriculum_epochs}")
        self.curriculum.validate()


@dataclass(frozen=True)
class Seq2SeqConfig:
    """Windowed encoder-decoder hyperparameters; defaults are the tuned Seq2Seq values."""

    word_emb_dim: int = 256
    lstm_hidden: int = 512
    layers: int = 1
    attention_dim: int = 256
    dropout: float = 0.0
    l2: float = 1e-4
    weight_noise_std: float = 0.2
    learning_rate: float = 3e-3
    window_k: int = 5
    window_stride: int = 1
    beam_width: int = 4
    max_decode_len: int = 24
    batch_size: int = 8
    epochs: int = 30
    attention_highlight: float = 0.05
    dtype: DType = "float64"

    def validate(self) -> None:
        for name in (
            "word_emb_dim",
            "lstm_hidden",
            "layers",
            "attention_dim",
            "window_k",
            "window_stride",
            "beam_width",
            "max_decode_len",
            "batch_size",
            "epochs",
        ):
            _check_positive(name, getattr(self, name))
        if self.window_stride > self.window_k:
            raise ConfigError(f"window_stride {self.window_stride} would skip turns between windows of {self.window_k}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        _check_positive("learning_rate", self.learning_rate)
        if self.l2 < 0 or self.weight_noise_std < 0:
            raise ConfigError("l2 and weight_noise_std must be >= 0")
        _check_rate("attention_highlight", self.attention_highlight)
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"unknown dtype {self.dtype!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape of the synthetic clinical-conversation corpus."""

    n_symptoms: int = 20
    n_systems: int = 14
    n_conversations: int = 100
    min_turns: int = 6
    max_turns: int = 14
    mention_rate: float = 3.0
    implied_rate: float = 0.25
    negation_rate: float = 0.25
    other_rate: float = 0.1
    paraphrase_variants: int = 3
    disagreement_rate: float = 0.1
    other_speaker_rate: float = 0.05

    def validate(self) -> None:
        for name in ("n_symptoms", "n_systems", "min_turns", "paraphrase_variants"):
            _check_positive(name, getattr(self, name))
        if self.n_conversations < 0:
            raise ConfigError(f"n_conversations must be >= 0, got {self.n_conversations}")
        if self.max_turns < self.min_turns:
            raise ConfigError(f"max_turns ({self.max_turns}) < min_turns ({self.min_turns})")
        if self.mention_rate < 0:
            raise ConfigError(f"mention_rate must be >= 0, got {self.mention_rate}")
        if self.n_systems > self.n_symptoms:
            raise ConfigError("every body system needs at least one symptom")
        for name in ("implied_rate", "negation_rate", "other_rate", "disagreement_rate", "other_speaker_rate"):
            _check_rate(name, getattr(self, name))
        if self.negation_rate + self.other_rate > 1.0:
            raise ConfigError("negation_rate + other_rate must not exceed 1")


@dataclass(frozen=True)
class AsrNoiseConfig:
    """Per-token corruption rates of the simulated recognizer."""

    substitution_rate: float = 0.12
    deletion_rate: float = 0.04
    insertion_rate: float = 0.04

    def validate(self) -> None:
        for name in ("substitution_rate", "deletion_rate", "insertion_rate"):
            _check_rate(name, getattr(self, name))
        if self.substitution_rate + self.deletion_rate > 1.0:
            raise ConfigError("substitution_rate + deletion_rate must not exceed 1")


@dataclass(frozen=True)
class SplitSizes:
    """Conversation counts of the generated splits."""

    train: int = 200
    dev: int = 50
    test: int = 50

    def validate(self) -> None:
        for name in ("train", "dev", "test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"split size {name} must be >= 0")
        if self.train == 0:
            raise ConfigError("the training split must not be empty")


@dataclass(frozen=True)
class ExperimentConfig:
    """Every tunable of a run, grouped by concern."""

    sat: SatConfig = field(default_factory=SatConfig)
    seq2seq: Seq2SeqConfig = field(default_factory=Seq2SeqConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    asr: AsrNoiseConfig = field(default_factory=AsrNoiseConfig)
    splits: SplitSizes = field(default_factory=SplitSizes)

    def validate(self) -> ExperimentConfig:
        self.sat.validate()
        self.seq2seq.validate()
        self.generator.validate()
        self.asr.validate()
        self.splits.validate()
        return self


@dataclass(frozen=True)
class RunConfig:
    """What a CLI invocation was asked to do."""

    command: str
    seed: int = 0
    output_dir: Path | None = None
    model_type: ModelType | None = None
    config_path: Path | None = None
    corpus_paths: tuple[Path, ...] = ()
    preset: str = "desk"


def _paper() -> ExperimentConfig:
    return ExperimentConfig(splits=SplitSizes(train=1950, dev=500, test=500), generator=GeneratorConfig(n_symptoms=186))


def _desk() -> ExperimentConfig:
    return ExperimentConfig(
        sat=SatConfig(word_emb_dim=32, lstm_hidden=32, ff_dim=32, epochs=20, batch_size=8),
        seq2seq=Seq2SeqConfig(word_emb_dim=32, lstm_hidden=32, attention_dim=32, epochs=20, batch_size=8),
        generator=GeneratorConfig(n_symptoms=20, n_systems=6),
    )


def _testing() -> ExperimentConfig:
    return ExperimentConfig(
        sat=SatConfig(
            word_emb_dim=8,
            lstm_hidden=6,
            ff_dim=6,
            dropout=0.0,
            weight_noise_std=0.0,
            alpha=0.5,
            learning_rate=2e-2,
            batch_size=4,
            epochs=3,
            curriculum=CurriculumSchedule(decay_steps=20),
            curriculum_epochs=0,
        ),
        seq2seq=Seq2SeqConfig(
            word_emb_dim=8,
            lstm_hidden=6,
            attention_dim=6,
            weight_noise_std=0.0,
            learning_rate=2e-2,
            beam_width=3,
            max_decode_len=10,
            batch_size=4,
            epochs=3,
        ),
        generator=GeneratorConfig(n_symptoms=6, n_systems=3, n_conversations=8, min_turns=3, max_turns=5),
        splits=SplitSizes(train=8, dev=4, test=4),
    )


# Configuration mapping
PRESETS: dict[str, Any] = {
    "paper": _paper,
    "desk": _desk,
    "testing": _testing,
    "default": _desk,
}

_SECTIONS: dict[str, type] = {
    "sat": SatConfig,
    "seq2seq": Seq2SeqConfig,
    "generator": GeneratorConfig,
    "asr": AsrNoiseConfig,
    "splits": SplitSizes,
}


def get_preset(name: str) -> ExperimentConfig:
    """Return a fresh copy of a named preset."""
    try:
        factory = PRESETS[name]
    except KeyError as exc:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from exc
    return factory()


def _merge_section(current: Any, values: Mapping[str, Any], section: str) -> Any:
    known = {f.name for f in dataclasses.fields(current)}
    updates: dict[str, Any] = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        if key == "curriculum":
            if not isinstance(value, Mapping):
                raise ConfigError(f"[{section}].curriculum must be a table")
            value = _merge_section(current.curriculum, value, f"{section}.curriculum")
        updates[key] = value
    return dataclasses.replace(current, **updates)


def apply_overrides(config: ExperimentConfig, overrides: Mapping[str, Mapping[str, Any]]) -> ExperimentConfig:
    """Overlay ``{section: {key: value}}`` onto a config, rejecting unknown keys."""
    updates: dict[str, Any] = {}
    for section, values in overrides.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config table [{section}]")
        if not isinstance(values, Mapping):
            raise ConfigError(f"[{section}] must be a table")
        updates[section] = _merge_section(getattr(config, section), values, section)
    return dataclasses.replace(config, **updates)


def load_config(
    path: Path | None = None,
    preset: str = "desk",
    overrides: Mapping[str, Mapping[str, Any]] | None = None,
) -> ExperimentConfig:
    """Build the effective config: preset, then file, then flag overrides."""
    config = get_preset(preset)
    if path is not None:
        try:
            with Path(path).open("rb") as handle:
                data = tomllib.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        config = apply_overrides(config, data)
    if overrides:
        config = apply_overrides(config, overrides)
    return config.validate()


def config_to_dict(config: Any) -> dict[str, Any]:
    """Plain-data view of any config dataclass."""
    return dataclasses.asdict(config)


def config_from_dict(cls: type, data: Mapping[str, Any]) -> Any:
    """Rebuild a config dataclass (with nested curriculum) from plain data."""
    values = dict(data)
    if cls is SatConfig and isinstance(values.get("curriculum"), Mapping):
        values["curriculum"] = CurriculumSchedule(**values["curriculum"])
    return cls(**values)


def config_hash(config: Any) -> str:
    """SHA-256 of the canonical JSON rendering of a config."""
    payload = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# Package settings and their environment variables
SETTINGS_ENV: dict[str, tuple[str, str]] = {
    "LOG_LEVEL": ("SXEXTRACT_LOG_LEVEL", "INFO"),
    "LOG_FORMAT": ("SXEXTRACT_LOG_FORMAT", "json"),
}

PACKAGE_INFO = {
    "name": "sxextract",
    "description": "Symptom and status extraction from clinical conversations",
    "license": "MIT",
}


def default_config() -> dict[str, Any]:
    """Package settings read from the environment at call time, so a loaded ``.env`` applies."""
    return {key: os.environ.get(name, fallback) for key, (name, fallback) in SETTINGS_ENV.items()}


def get_config(key: str, default: Any = None) -> Any:
    """Get configuration value with fallback to default."""
    return default_config().get(key, default)
