"""Adam with per-component learning rates, plus global-norm gradient clipping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .config import OptimizerConfig
from .errors import ShapeError
from .tensor_core import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First and second moment estimates per tensor name."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    skipped_steps: int = 0


def learning_rate_for(name: str, cfg: OptimizerConfig) -> float:
    return cfg.lr_decoder if name.startswith("decoder.") else cfg.lr_encoder


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(
    grads: Mapping[str, np.ndarray], max_norm: Optional[float]
) -> Tuple[Dict[str, np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm is None or not math.isfinite(norm) or norm <= max_norm:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: OptimizerConfig,
) -> bool:
    """Apply one bias-corrected Adam update in place.

    Returns False, leaving parameters and moments untouched, when any
    gradient is non-finite; ``state.skipped_steps`` counts those batches.
    """
    for name, tensor in params.items():
        if name not in grads:
            raise ShapeError(f"no gradient for parameter {name!r}")
        if grads[name].shape != tensor.shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {grads[name].shape}, expected {tensor.shape}"
            )
    if not all(np.all(np.isfinite(grads[name])) for name in params):
        state.skipped_steps += 1
        logger.warning("Skipping optimizer step: non-finite gradient (%d skipped so far)", state.skipped_steps)
        return False

    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for name, tensor in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        tensor.values -= learning_rate_for(name, cfg) * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return True
