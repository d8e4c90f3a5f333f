"""
End-to-end ranking model: sentence encoder, paragraph encoder and decoder.

A batch of paragraphs is packed into a single matrix at every stage.
Sentence tokens attend only within their sentence, and sentences only
within their paragraph, so the packed forward pass equals running each
paragraph on its own.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .config import ModelConfig
from .data import Paragraph
from .encoders import (
    ParagraphEncoderParams,
    SentenceEncoderParams,
    encode_paragraph,
    encode_sentences,
    group_mask,
    init_paragraph_encoder,
    init_sentence_encoder,
)
from .errors import ConfigError, InputError
from .losses import LossKind, LossSpec, paragraph_loss
from .scorer import DecoderParams, OrderPrediction, init_decoder, make_prediction, score_sentences
from .seeding import make_rng
from .tensor_core import Tensor, add, constant, no_grad, scale, take_rows

logger = logging.getLogger(__name__)

SENTENCE_ENCODER_PREFIX = "sentence_encoder."
DECODER_PREFIX = "decoder."


@dataclass
class ModelParams:
    """All trainable tensors of one model, addressable by dotted name."""

    config: ModelConfig
    sentence_encoder: Optional[SentenceEncoderParams]
    paragraph_encoder: ParagraphEncoderParams
    decoder: DecoderParams

    def __post_init__(self) -> None:
        if self.config.mode == "tokens" and self.sentence_encoder is None:
            raise ConfigError("token mode needs a sentence encoder")
        if self.config.mode == "embeddings" and self.sentence_encoder is not None:
            raise ConfigError("embedding mode takes precomputed vectors; no sentence encoder")

    def named_tensors(self) -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        if self.sentence_encoder is not None:
            named.update(self.sentence_encoder.named_tensors("sentence_encoder"))
        named.update(self.paragraph_encoder.named_tensors("paragraph_encoder"))
        named.update(self.decoder.named_tensors("decoder"))
        return named

    @staticmethod
    def component_of(name: str) -> str:
        """Learning-rate group of a tensor: ``decoder`` or ``encoder``."""
        return "decoder" if name.startswith(DECODER_PREFIX) else "encoder"

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.named_tensors().items()}

    def load_state(
        self, state: Mapping[str, np.ndarray], *, prefix: Optional[str] = None
    ) -> List[str]:
        """Copy arrays into the existing tensors; returns the names that were loaded.

        With ``prefix`` only tensors whose name starts with it are loaded and
        every one of them must be present in ``state``.
        """
        loaded: List[str] = []
        for name, tensor in self.named_tensors().items():
            if prefix is not None and not name.startswith(prefix):
                continue
            if name not in state:
                raise ConfigError(f"checkpoint has no tensor {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ConfigError(
                    f"tensor {name!r} has shape {arr.shape} in the checkpoint "
                    f"but {tensor.shape} in the model"
                )
            tensor.values[...] = arr
            loaded.append(name)
        if prefix is not None and not loaded:
            raise ConfigError(f"model has no tensors under {prefix!r}")
        return loaded

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_tensors().values())


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    rng = make_rng(seed, "init")
    sentence_encoder = None
    if config.mode == "tokens":
        sentence_encoder = init_sentence_encoder(
            rng,
            config.vocab_size,
            config.d_model,
            config.heads,
            config.sentence_blocks,
            config.max_len,
        )
    params = ModelParams(
        config=config,
        sentence_encoder=sentence_encoder,
        paragraph_encoder=init_paragraph_encoder(
            rng, config.d_model, config.heads, config.paragraph_blocks
        ),
        decoder=init_decoder(rng, config.d_model, config.decoder_hidden, config.decoder_layers),
    )
    logger.debug("Initialised %s-mode model with %d parameters", config.mode, params.parameter_count())
    return params


class RankingModel:
    """Scores every sentence of a paragraph in parallel."""

    def __init__(self, params: ModelParams, *, freeze_sentence_encoder: bool = False) -> None:
        self.params = params
        self.freeze_sentence_encoder = freeze_sentence_encoder

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    def trainable_tensors(self) -> Dict[str, Tensor]:
        named = self.params.named_tensors()
        if self.freeze_sentence_encoder:
            named = {k: v for k, v in named.items() if not k.startswith(SENTENCE_ENCODER_PREFIX)}
        return named

    def _check_paragraph(self, paragraph: Paragraph) -> None:
        if paragraph.mode != self.config.mode:
            raise ConfigError(
                f"paragraph {paragraph.id!r} is {paragraph.mode} input but the model "
                f"expects {self.config.mode}"
            )

    def sentence_vectors(self, paragraphs: Sequence[Paragraph]) -> Tensor:
        """Packed ``(sum m, d_model)`` matrix of sentence vectors for a batch."""
        if not paragraphs:
            raise InputError("cannot score an empty batch")
        for p in paragraphs:
            self._check_paragraph(p)

        if self.config.mode == "embeddings":
            rows = np.concatenate([p.embeddings for p in paragraphs if p.embeddings is not None])
            if rows.shape[1] != self.config.d_model:
                raise ConfigError(
                    f"embeddings have dimension {rows.shape[1]} but the model "
                    f"uses d_model={self.config.d_model}"
                )
            return constant(rows)

        encoder = self.params.sentence_encoder
        assert encoder is not None
        sentences = [s for p in paragraphs for s in (p.sentences or ())]
        if self.freeze_sentence_encoder:
            with no_grad():
                return encode_sentences(sentences, encoder)
        return encode_sentences(sentences, encoder)

    def forward(self, paragraphs: Sequence[Paragraph]) -> List[Tensor]:
        """One ``(m,)`` score vector per paragraph."""
        vectors = self.sentence_vectors(paragraphs)
        sizes = [p.m for p in paragraphs]
        mask = group_mask(sizes) if len(sizes) > 1 else None
        contextual = encode_paragraph(vectors, self.params.paragraph_encoder, mask)
        scores = score_sentences(contextual, self.params.decoder)
        if len(sizes) == 1:
            return [scores]

        out: List[Tensor] = []
        offset = 0
        for m in sizes:
            out.append(take_rows(scores, np.arange(offset, offset + m)))
            offset += m
        return out

    def paragraph_scores(self, paragraph: Paragraph) -> Tensor:
        return self.forward([paragraph])[0]

    def batch_loss(self, paragraphs: Sequence[Paragraph], loss: LossSpec) -> Tensor:
        """Mean of the per-paragraph losses of a mini-batch."""
        total: Optional[Tensor] = None
        for paragraph, scores in zip(paragraphs, self.forward(paragraphs)):
            value = paragraph_loss(scores, paragraph.gold_order, loss)
            total = value if total is None else add(total, value)
        assert total is not None
        return scale(total, 1.0 / len(paragraphs))

    def predict(self, paragraph: Paragraph, loss_kind: LossKind) -> OrderPrediction:
        with no_grad():
            return make_prediction(self.paragraph_scores(paragraph), loss_kind)

    def predict_batch(
        self, paragraphs: Sequence[Paragraph], loss_kind: LossKind
    ) -> List[OrderPrediction]:
        with no_grad():
            return [make_prediction(s, loss_kind) for s in self.forward(paragraphs)]
