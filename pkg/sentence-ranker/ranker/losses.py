"""
The four ranking objectives: pointwise MSE, pairwise margin, ListNet and ListMLE.

Each loss takes the scores of one paragraph as a 1-D ``Tensor`` and returns a
scalar ``Tensor`` built from ``tensor_core`` ops, so gradients come from the
tape. The softmax-family losses stay in the log domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .constants import DEFAULT_MARGIN
from .errors import ContractError, InputError
from .tensor_core import (
    Tensor,
    add_scalar,
    constant,
    log_softmax_rows,
    logsumexp_rows,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    sub,
    sum_all,
    take_rows,
)

logger = logging.getLogger(__name__)

ScoreInput = Union[Tensor, Sequence[float], np.ndarray]


class LossKind(str, Enum):
    """Ranking objectives supported by the trainer."""

    POINTWISE = "pointwise"
    PAIRWISE = "pairwise"
    LISTNET = "listnet"
    LISTMLE = "listmle"

    @property
    def descending(self) -> bool:
        """ListMLE pushes earlier sentences to higher scores; the others rank ascending."""
        return self is LossKind.LISTMLE


class LossSpec(BaseModel):
    """Which objective to optimise and its margin (used by the pairwise loss only)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: LossKind = LossKind.LISTMLE
    margin: float = Field(DEFAULT_MARGIN, gt=0.0)


@dataclass(frozen=True)
class GoldScores:
    """Evenly spaced targets in [0, 1], increasing with correct position."""

    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        m = len(self.values)
        if m < 2:
            raise InputError(f"gold scores need at least 2 sentences, got {m}")
        if self.values[0] != 0.0 or self.values[-1] != 1.0:
            raise InputError("gold scores must start at 0 and end at 1")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise InputError("gold scores must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def gold_scores(m: int) -> GoldScores:
    """Return ``y_k = (k - 1) / (m - 1)`` for k = 1..m."""
    if m < 2:
        raise InputError(f"gold scores need at least 2 sentences, got {m}")
    return GoldScores(tuple(k / (m - 1) for k in range(m)))


def _as_scores(z: ScoreInput) -> Tensor:
    scores = z if isinstance(z, Tensor) else constant(np.asarray(z, dtype=np.float64))
    if scores.values.ndim != 1:
        raise ContractError(f"scores must be a 1-D vector, got shape {scores.shape}")
    return scores


def _gold_array(y: Union[GoldScores, Sequence[float], np.ndarray]) -> np.ndarray:
    if isinstance(y, GoldScores):
        return y.as_array()
    return np.asarray(y, dtype=np.float64)


def pointwise_loss(z: ScoreInput, y: Union[GoldScores, Sequence[float]]) -> Tensor:
    """Mean squared error between scores and gold scores (regression view)."""
    scores = _as_scores(z)
    target = _gold_array(y)
    if target.shape != scores.shape:
        raise ContractError(
            f"pointwise loss: {scores.shape[0]} scores vs {target.size} gold scores"
        )
    diff = sub(scores, constant(target))
    return mean_all(mul(diff, diff))


def pairwise_loss(z: ScoreInput, margin: float = DEFAULT_MARGIN) -> Tensor:
    """Mean hinge ``max(0, z_k - z_{k+1} + margin)`` over consecutive sentences.

    ``z`` must be indexed in the paragraph's correct order; each later
    sentence is pushed at least ``margin`` above the one before it.
    """
    scores = _as_scores(z)
    m = scores.shape[0]
    if m < 2:
        raise InputError(f"pairwise loss needs at least 2 sentences, got {m}")
    if margin <= 0:
        raise ContractError(f"margin must be positive, got {margin}")
    diff = np.zeros((m - 1, m))
    rows = np.arange(m - 1)
    diff[rows, rows] = 1.0
    diff[rows, rows + 1] = -1.0
    gaps = matmul(constant(diff), reshape(scores, (m, 1)))
    return mean_all(relu(add_scalar(gaps, margin)))


def listnet_loss(z: ScoreInput, y: Union[GoldScores, Sequence[float]]) -> Tensor:
    """Cross-entropy between top-one probabilities of gold scores and predicted scores."""
    scores = _as_scores(z)
    target = _gold_array(y)
    m = scores.shape[0]
    if target.shape != (m,):
        raise ContractError(f"ListNet loss: {m} scores vs {target.size} gold scores")
    shifted = np.exp(target - target.max())
    top_one = shifted / shifted.sum()
    log_probs = log_softmax_rows(reshape(scores, (1, m)))
    return scale(sum_all(mul(log_probs, constant(top_one[None, :]))), -1.0)


def _validate_order(order: Sequence[int], m: int) -> np.ndarray:
    arr = np.asarray(order, dtype=np.int64)
    if arr.shape != (m,) or sorted(arr.tolist()) != list(range(1, m + 1)):
        raise ContractError(f"{list(order)} is not a permutation of 1..{m}")
    return arr - 1


def listmle_loss(z: ScoreInput, correct_order: Sequence[int]) -> Tensor:
    """Plackett-Luce negative log-likelihood of ``correct_order``.

    ``correct_order[k]`` is the 1-based index (into ``z``) of the sentence in
    position k. Each factor's denominator is a log-sum-exp over the suffix.
    """
    scores = _as_scores(z)
    m = scores.shape[0]
    idx = _validate_order(correct_order, m)
    ordered = take_rows(scores, idx)
    tiled = matmul(constant(np.ones((m, 1))), reshape(ordered, (1, m)))
    suffix = np.triu(np.ones((m, m), dtype=bool))
    return sum_all(sub(logsumexp_rows(tiled, suffix), ordered))


def gold_entropy(y: Union[GoldScores, Sequence[float]]) -> float:
    """Entropy of the top-one distribution of the gold scores (ListNet's lower bound)."""
    target = _gold_array(y)
    shifted = target - target.max()
    log_p = shifted - np.log(np.exp(shifted).sum())
    return float(-(np.exp(log_p) * log_p).sum())


def paragraph_loss(
    scores: Tensor, gold_order: Sequence[int], spec: LossSpec
) -> Tensor:
    """Loss of one paragraph whose presented sentence ``i`` belongs at ``gold_order[i]``."""
    m = scores.shape[0]
    positions = _validate_order(gold_order, m)
    correct = np.argsort(positions, kind="stable")
    if spec.kind is LossKind.LISTMLE:
        return listmle_loss(scores, (correct + 1).tolist())

    in_order = take_rows(scores, correct)
    if spec.kind is LossKind.POINTWISE:
        return pointwise_loss(in_order, gold_scores(m))
    if spec.kind is LossKind.PAIRWISE:
        return pairwise_loss(in_order, spec.margin)
    return listnet_loss(in_order, gold_scores(m))
