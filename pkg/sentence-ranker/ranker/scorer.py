"""
Position-wise feed-forward decoder and score-to-order prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, ShapeError
from .losses import LossKind, LossSpec
from .tensor_core import Tensor, add, matmul, parameter, relu, reshape
from .encoders import glorot_uniform

logger = logging.getLogger(__name__)


@dataclass
class DecoderParams:
    """Affine layers with ReLU between them, ending in a single output unit."""

    weights: List[Tensor]
    biases: List[Tensor]

    def __post_init__(self) -> None:
        if not self.weights or len(self.weights) != len(self.biases):
            raise ContractError("decoder needs one bias per weight matrix")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ShapeError(f"bias {b.shape} does not match weight {w.shape}")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ShapeError(f"decoder layers {prev.shape} -> {nxt.shape} do not chain")
        if self.weights[-1].shape[1] != 1:
            raise ContractError("decoder must end in exactly one output unit")

    @property
    def layers(self) -> int:
        return len(self.weights)

    def named_tensors(self, prefix: str = "decoder") -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f"{prefix}.layers.{i}.weight"] = w
            named[f"{prefix}.layers.{i}.bias"] = b
        return named


def init_decoder(
    rng: np.random.Generator, d_model: int, hidden: int, layers: int
) -> DecoderParams:
    widths = [d_model] + [hidden] * (layers - 1) + [1]
    return DecoderParams(
        weights=[parameter(glorot_uniform(rng, a, b)) for a, b in zip(widths, widths[1:])],
        biases=[parameter(np.zeros(b)) for b in widths[1:]],
    )


@dataclass(frozen=True)
class OrderPrediction:
    """Scores of one paragraph and the order they imply.

    ``predicted_order[i]`` is the 1-based position assigned to presented
    sentence ``i``, the same convention as a paragraph's gold order.
    """

    scores: Tuple[float, ...]
    predicted_order: Tuple[int, ...]
    loss_kind: LossKind


def score_sentences(paragraph_repr: Tensor, d: DecoderParams) -> Tensor:
    """Map each row independently through the decoder; returns an ``(m,)`` score vector."""
    if paragraph_repr.values.ndim != 2 or paragraph_repr.shape[0] < 1:
        raise ShapeError(f"decoder expects (m, d) input, got {paragraph_repr.shape}")
    h = paragraph_repr
    last = d.layers - 1
    for i, (w, b) in enumerate(zip(d.weights, d.biases)):
        h = add(matmul(h, w), b)
        if i < last:
            h = relu(h)
    return reshape(h, (paragraph_repr.shape[0],))


def predict_order(
    scores: Union[Sequence[float], np.ndarray, Tensor],
    loss_kind: Union[LossKind, LossSpec],
) -> Tuple[int, ...]:
    """Sort scores into positions; ascending, or descending for ListMLE.

    Ties keep the lower input index first, so equal scores give the identity order.
    """
    kind = loss_kind.kind if isinstance(loss_kind, LossSpec) else LossKind(loss_kind)
    values = scores.values if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    values = values.reshape(-1)
    if not np.all(np.isfinite(values)):
        raise ContractError(f"cannot order non-finite scores {values.tolist()}")
    keys = -values if kind.descending else values
    # lexsort sorts by the last key first: score, then input index
    ranking = np.lexsort((np.arange(values.size), keys))
    positions = np.empty(values.size, dtype=np.int64)
    positions[ranking] = np.arange(1, values.size + 1)
    return tuple(int(p) for p in positions)


def make_prediction(scores: Tensor, loss_kind: LossKind) -> OrderPrediction:
    return OrderPrediction(
        scores=tuple(float(s) for s in scores.values.reshape(-1)),
        predicted_order=predict_order(scores, loss_kind),
        loss_kind=loss_kind,
    )
