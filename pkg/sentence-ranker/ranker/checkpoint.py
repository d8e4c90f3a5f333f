"""
Checkpoint files: model tensors, Adam moments and the config that produced them.

A checkpoint is a single JSON document written with sorted keys, so two
identical training runs produce byte-identical files::

    {
      "format": "ranker-checkpoint",
      "version": 1,
      "epoch": 3,                       # 0 = untrained initial model
      "val_tau": 0.91,                  # validation tau of these weights
      "best_val_tau": 0.93,             # best seen so far in the run (null before any)
      "config": {"model": {...}, "loss": {...}, "optimizer": {...}},
      "config_digest": "<sha256 of config>",
      "tensors": {"<name>": {"shape": [r, c], "values": [...]}, ...},
      "optimizer": {"step": 120, "skipped_steps": 0,
                    "m": {"<name>": {"shape": ..., "values": ...}},
                    "v": {...}}
    }

Tensor values are flattened in row-major order. Floats are written in
shortest round-trip form, so reloading restores every bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import orjson
from pydantic import ValidationError

from .config import ModelConfig, OptimizerConfig, config_digest
from .constants import CHECKPOINT_FORMAT, CHECKPOINT_VERSION, LAST_CHECKPOINT_SUFFIX
from .errors import ConfigError
from .losses import LossSpec
from .model import ModelParams, init_model
from .optim import AdamState

logger = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    params: ModelParams
    loss: LossSpec
    optimizer_config: OptimizerConfig
    epoch: int = 0
    val_tau: Optional[float] = None
    best_val_tau: Optional[float] = None
    adam: Optional[AdamState] = None

    def config_dict(self) -> Dict[str, Any]:
        return {
            "model": self.params.config.model_dump(mode="json"),
            "loss": self.loss.model_dump(mode="json"),
            "optimizer": self.optimizer_config.model_dump(mode="json"),
        }

    @property
    def digest(self) -> str:
        return config_digest(self.config_dict())


def last_checkpoint_path(path: Union[str, Path]) -> Path:
    target = Path(path)
    return target.with_name(target.name + LAST_CHECKPOINT_SUFFIX)


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def _pack(arrays: Mapping[str, np.ndarray]) -> Dict[str, Dict[str, Any]]:
    return {
        name: {"shape": list(arr.shape), "values": np.ascontiguousarray(arr).reshape(-1)}
        for name, arr in arrays.items()
    }


def _unpack(blob: Mapping[str, Any], what: str) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {}
    for name, entry in blob.items():
        try:
            shape = tuple(int(d) for d in entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
            arrays[name] = values.reshape(shape)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"corrupt {what} entry {name!r}: {exc}") from exc
    return arrays


def checkpoint_to_dict(ckpt: Checkpoint) -> Dict[str, Any]:
    optimizer: Optional[Dict[str, Any]] = None
    if ckpt.adam is not None:
        optimizer = {
            "step": ckpt.adam.step,
            "skipped_steps": ckpt.adam.skipped_steps,
            "m": _pack(ckpt.adam.m),
            "v": _pack(ckpt.adam.v),
        }
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "epoch": ckpt.epoch,
        "val_tau": _finite_or_none(ckpt.val_tau),
        "best_val_tau": _finite_or_none(ckpt.best_val_tau),
        "config": ckpt.config_dict(),
        "config_digest": ckpt.digest,
        "tensors": _pack(ckpt.params.state_dict()),
        "optimizer": optimizer,
    }


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = orjson.dumps(
        checkpoint_to_dict(ckpt), option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
    )
    # readers only ever see a complete file
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(target)
    logger.debug("Saved epoch-%d checkpoint to %s", ckpt.epoch, target)
    return target


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    source = Path(path)
    try:
        raw = orjson.loads(source.read_bytes())
    except orjson.JSONDecodeError as exc:
        raise ConfigError(f"{source} is not a checkpoint: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{source} is not a {CHECKPOINT_FORMAT} file")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(
            f"{source} has checkpoint version {raw.get('version')}; "
            f"this build reads version {CHECKPOINT_VERSION}"
        )

    try:
        config = raw["config"]
        model_config = ModelConfig(**config["model"])
        loss = LossSpec(**config["loss"])
        optimizer_config = OptimizerConfig(**config["optimizer"])
    except (KeyError, TypeError, ValidationError) as exc:
        raise ConfigError(f"{source} has an invalid config block: {exc}") from exc

    params = init_model(model_config, seed=0)
    params.load_state(_unpack(raw.get("tensors", {}), "tensor"))

    adam = None
    if raw.get("optimizer") is not None:
        opt = raw["optimizer"]
        try:
            adam = AdamState(
                step=int(opt["step"]),
                m=_unpack(opt.get("m", {}), "optimizer moment"),
                v=_unpack(opt.get("v", {}), "optimizer moment"),
                skipped_steps=int(opt.get("skipped_steps", 0)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"{source} has an invalid optimizer block: {exc}") from exc

    ckpt = Checkpoint(
        params=params,
        loss=loss,
        optimizer_config=optimizer_config,
        epoch=int(raw.get("epoch", 0)),
        val_tau=raw.get("val_tau"),
        best_val_tau=raw.get("best_val_tau"),
        adam=adam,
    )
    if raw.get("config_digest") != ckpt.digest:
        logger.warning("Checkpoint %s config digest does not match its config block", source)
    logger.info("Loaded epoch-%d checkpoint from %s", ckpt.epoch, source)
    return ckpt
