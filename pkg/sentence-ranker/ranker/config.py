"""
Validated configuration models for the sentence ranker.

All settings that determine a run live in pydantic models so that a run
can be echoed, hashed and reproduced from its config alone. Flat
``key=value`` config files are read with python-dotenv.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

import orjson
from dotenv import dotenv_values
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .constants import (
    DECODER_LAYERS,
    DEFAULT_FD_STEP,
    DEFAULT_GRAD_CLIP_NORM,
    FEED_FORWARD_RATIO,
    GRADCHECK_THRESHOLD,
    MAX_SENTENCES,
    MIN_SENTENCES,
)
from .errors import ConfigError
from .losses import LossSpec

logger = logging.getLogger(__name__)

InputMode = Literal["tokens", "embeddings"]


class ModelConfig(BaseModel):
    """Architecture of the sentence encoder, paragraph encoder and decoder."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: InputMode = "tokens"
    vocab_size: int = Field(50, ge=2)
    d_model: int = Field(64, ge=1)
    heads: int = Field(4, ge=1)
    sentence_blocks: int = Field(2, ge=1)
    paragraph_blocks: int = Field(2, ge=0)
    decoder_hidden: int = Field(64, ge=1)
    decoder_layers: int = Field(DECODER_LAYERS, ge=1)
    max_len: int = Field(64, ge=1)

    @model_validator(mode="after")
    def _check_heads(self) -> "ModelConfig":
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model={self.d_model} is not divisible by heads={self.heads}"
            )
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def d_ff(self) -> int:
        return FEED_FORWARD_RATIO * self.d_model


class OptimizerConfig(BaseModel):
    """Adam hyperparameters with separate encoder and decoder learning rates."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.999, gt=0.0, lt=1.0)
    lr_encoder: float = Field(1e-3, ge=0.0)
    lr_decoder: float = Field(5e-3, ge=0.0)
    epsilon: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(30, ge=0)
    seed: int = 0
    grad_clip_norm: Optional[float] = Field(DEFAULT_GRAD_CLIP_NORM, gt=0.0)
    freeze_sentence_encoder: bool = False

    @field_validator("grad_clip_norm", mode="before")
    @classmethod
    def _parse_clip(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in ("none", "off", ""):
            return None
        return value


class SynthSpec(BaseModel):
    """Recipe for a synthetic corpus whose order is carried by position-key tokens."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_train: int = Field(2000, ge=0)
    n_val: int = Field(200, ge=0)
    n_test: int = Field(200, ge=0)
    min_sentences: int = Field(3, ge=MIN_SENTENCES, le=MAX_SENTENCES)
    max_sentences: int = Field(6, ge=MIN_SENTENCES, le=MAX_SENTENCES)
    vocab_size: int = Field(50, ge=2)
    signal: float = Field(1.0, ge=0.0, le=1.0)
    min_filler: int = Field(2, ge=0)
    max_filler: int = Field(5, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "SynthSpec":
        if self.min_sentences > self.max_sentences:
            raise ValueError("min_sentences must not exceed max_sentences")
        if self.min_filler > self.max_filler:
            raise ValueError("min_filler must not exceed max_filler")
        # PAD, UNK, one key per position, and at least one filler token
        needed = 2 + self.max_sentences + 1
        if self.vocab_size < needed:
            raise ValueError(
                f"vocab_size={self.vocab_size} too small; need at least {needed}"
            )
        return self

    def split_sizes(self) -> Dict[str, int]:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}


PATH_KEYS = frozenset(
    {
        "corpus",
        "train",
        "val",
        "test",
        "vocab",
        "checkpoint",
        "output",
        "log",
        "dump",
        "resume",
        "init_sentence_encoder",
        "out_dir",
    }
)


class RunConfig(BaseModel):
    """Everything that determines one CLI run, besides its input files' contents."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: str
    seed: int = 0
    threads: int = Field(1, ge=1)
    pairs_per_paragraph: int = Field(5, ge=1)
    fd_step: float = Field(DEFAULT_FD_STEP, gt=0.0)
    threshold: float = Field(GRADCHECK_THRESHOLD, gt=0.0)
    max_coords: int = Field(400, ge=1)
    paths: Dict[str, str] = Field(default_factory=dict)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossSpec = Field(default_factory=LossSpec)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    synth: SynthSpec = Field(default_factory=SynthSpec)

    @classmethod
    def from_flat(cls, command: str, values: Mapping[str, Any]) -> "RunConfig":
        """Route flat ``key -> value`` settings (flags, config file) into the nested models."""
        groups: Dict[str, Dict[str, Any]] = {
            "model": {},
            "optimizer": {},
            "synth": {},
            "loss": {},
            "paths": {},
        }
        # synth and model share vocab_size; the running command decides the owner
        nested = [
            ("model", ModelConfig.model_fields),
            ("optimizer", OptimizerConfig.model_fields),
            ("synth", SynthSpec.model_fields),
        ]
        if command == "synth":
            nested.reverse()
        top: Dict[str, Any] = {"command": command}
        for raw_key, value in values.items():
            key = normalise_key(raw_key)
            if key == "loss":
                groups["loss"]["kind"] = value
            elif key == "margin":
                groups["loss"]["margin"] = value
            elif key in PATH_KEYS:
                groups["paths"][key] = str(value)
            elif key in cls.model_fields and key not in ("command", "paths"):
                top[key] = value
            else:
                owner = next((name for name, fields in nested if key in fields), None)
                if owner is None:
                    raise ConfigError(f"unknown setting {raw_key!r} for {command}")
                groups[owner][key] = value

        # one --seed drives every component; named sub-seeds split it further
        if "seed" in top:
            groups["optimizer"].setdefault("seed", top["seed"])
            groups["synth"].setdefault("seed", top["seed"])
        try:
            return cls(
                **top,
                paths=groups["paths"],
                model=ModelConfig(**groups["model"]),
                loss=LossSpec(**groups["loss"]),
                optimizer=OptimizerConfig(**groups["optimizer"]),
                synth=SynthSpec(**groups["synth"]),
            )
        except ValidationError as exc:
            raise ConfigError(f"invalid {command} configuration: {exc}") from exc

    def path(self, name: str) -> Optional[Path]:
        value = self.paths.get(name)
        return Path(value) if value else None

    def require_path(self, name: str) -> Path:
        value = self.path(name)
        if value is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required for {self.command}")
        return value

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def normalise_key(key: str) -> str:
    return key.strip().lower().lstrip("-").replace("-", "_")


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Read a flat ``key=value`` file; keys may use dashes or underscores."""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    raw = dotenv_values(config_path)
    values: Dict[str, str] = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError(f"config key {key!r} in {config_path} has no value")
        values[normalise_key(key)] = value
    logger.debug("Loaded %d settings from %s", len(values), config_path)
    return values


def config_digest(payload: Union[BaseModel, Mapping[str, Any]]) -> str:
    """sha256 of the canonical JSON form of ``payload``."""
    data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    return hashlib.sha256(orjson.dumps(data, option=orjson.OPT_SORT_KEYS)).hexdigest()
