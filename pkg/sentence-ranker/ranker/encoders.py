"""
Transformer sentence encoder and the order-invariant paragraph encoder.

The sentence encoder embeds token ids, adds fixed sinusoidal word
positions, runs its transformer blocks and mean-pools each sentence.
The paragraph encoder is the same block stack without any positional
input, so permuting its input rows permutes its output rows identically.

Several sentences (or paragraphs) are packed into one matrix and kept
apart with a block-diagonal attention mask; masked scores get probability
zero, which matches running each group on its own.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .constants import EMBEDDING_INIT_STD, FEED_FORWARD_RATIO
from .errors import ContractError, InputError, ShapeError
from .tensor_core import (
    Mask,
    Tensor,
    add,
    concat_cols,
    constant,
    layer_norm,
    matmul,
    parameter,
    relu,
    reshape,
    scale,
    softmax_rows,
    take_rows,
    transpose,
)

logger = logging.getLogger(__name__)


@dataclass
class AttentionParams:
    """Per-head query/key/value projections plus the shared output projection."""

    w_q: List[Tensor]
    w_k: List[Tensor]
    w_v: List[Tensor]
    w_o: Tensor

    def __post_init__(self) -> None:
        heads = len(self.w_q)
        if heads == 0 or len(self.w_k) != heads or len(self.w_v) != heads:
            raise ContractError("attention needs the same positive number of Q/K/V heads")
        d_model = self.w_q[0].shape[0]
        d_k = self.w_q[0].shape[1]
        d_v = self.w_v[0].shape[1]
        for w in self.w_q + self.w_k:
            if w.shape != (d_model, d_k):
                raise ShapeError(f"query/key projection {w.shape} != {(d_model, d_k)}")
        for w in self.w_v:
            if w.shape != (d_model, d_v):
                raise ShapeError(f"value projection {w.shape} != {(d_model, d_v)}")
        if self.w_o.shape != (heads * d_v, d_model):
            raise ShapeError(
                f"output projection {self.w_o.shape} != {(heads * d_v, d_model)}"
            )

    @property
    def heads(self) -> int:
        return len(self.w_q)

    def named_tensors(self, prefix: str) -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for i in range(self.heads):
            named[f"{prefix}.w_q.{i}"] = self.w_q[i]
            named[f"{prefix}.w_k.{i}"] = self.w_k[i]
            named[f"{prefix}.w_v.{i}"] = self.w_v[i]
        named[f"{prefix}.w_o"] = self.w_o
        return named


@dataclass
class TransformerBlock:
    attention: AttentionParams
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def __post_init__(self) -> None:
        d_model = self.attention.w_o.shape[1]
        d_ff = FEED_FORWARD_RATIO * d_model
        if self.ff_w1.shape != (d_model, d_ff) or self.ff_w2.shape != (d_ff, d_model):
            raise ShapeError(
                f"feed-forward must map {d_model} -> {d_ff} -> {d_model}, got "
                f"{self.ff_w1.shape} and {self.ff_w2.shape}"
            )

    @property
    def d_model(self) -> int:
        return self.attention.w_o.shape[1]

    def named_tensors(self, prefix: str) -> Dict[str, Tensor]:
        named = self.attention.named_tensors(f"{prefix}.attention")
        named.update(
            {
                f"{prefix}.ff_w1": self.ff_w1,
                f"{prefix}.ff_b1": self.ff_b1,
                f"{prefix}.ff_w2": self.ff_w2,
                f"{prefix}.ff_b2": self.ff_b2,
                f"{prefix}.ln1_gain": self.ln1_gain,
                f"{prefix}.ln1_bias": self.ln1_bias,
                f"{prefix}.ln2_gain": self.ln2_gain,
                f"{prefix}.ln2_bias": self.ln2_bias,
            }
        )
        return named


@dataclass
class SentenceEncoderParams:
    """Token embeddings, fixed word-position table and the block stack."""

    token_embedding: Tensor
    positional: np.ndarray = field(repr=False)
    blocks: List[TransformerBlock]
    pooling: str = "mean"

    def __post_init__(self) -> None:
        if self.token_embedding.shape[0] < 2:
            raise ContractError("vocabulary must hold at least PAD and UNK")
        if not self.blocks:
            raise ContractError("sentence encoder needs at least one block")
        if self.pooling != "mean":
            raise ContractError(f"unsupported pooling mode {self.pooling!r}")

    @property
    def vocab_size(self) -> int:
        return self.token_embedding.shape[0]

    @property
    def max_len(self) -> int:
        return self.positional.shape[0]

    def named_tensors(self, prefix: str = "sentence_encoder") -> Dict[str, Tensor]:
        named = {f"{prefix}.token_embedding": self.token_embedding}
        for i, block in enumerate(self.blocks):
            named.update(block.named_tensors(f"{prefix}.blocks.{i}"))
        return named


@dataclass
class ParagraphEncoderParams:
    """Block stack with no positional table, hence permutation equivariant."""

    blocks: List[TransformerBlock]

    def named_tensors(self, prefix: str = "paragraph_encoder") -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for i, block in enumerate(self.blocks):
            named.update(block.named_tensors(f"{prefix}.blocks.{i}"))
        return named


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    positions = np.arange(max_len, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: d_model // 2])
    return table


def init_attention(
    rng: np.random.Generator, d_model: int, heads: int
) -> AttentionParams:
    if d_model % heads != 0:
        raise ContractError(f"d_model={d_model} is not divisible by heads={heads}")
    d_head = d_model // heads
    return AttentionParams(
        w_q=[parameter(glorot_uniform(rng, d_model, d_head)) for _ in range(heads)],
        w_k=[parameter(glorot_uniform(rng, d_model, d_head)) for _ in range(heads)],
        w_v=[parameter(glorot_uniform(rng, d_model, d_head)) for _ in range(heads)],
        w_o=parameter(glorot_uniform(rng, heads * d_head, d_model)),
    )


def init_block(rng: np.random.Generator, d_model: int, heads: int) -> TransformerBlock:
    d_ff = FEED_FORWARD_RATIO * d_model
    return TransformerBlock(
        attention=init_attention(rng, d_model, heads),
        ff_w1=parameter(glorot_uniform(rng, d_model, d_ff)),
        ff_b1=parameter(np.zeros(d_ff)),
        ff_w2=parameter(glorot_uniform(rng, d_ff, d_model)),
        ff_b2=parameter(np.zeros(d_model)),
        ln1_gain=parameter(np.ones(d_model)),
        ln1_bias=parameter(np.zeros(d_model)),
        ln2_gain=parameter(np.ones(d_model)),
        ln2_bias=parameter(np.zeros(d_model)),
    )


def init_sentence_encoder(
    rng: np.random.Generator,
    vocab_size: int,
    d_model: int,
    heads: int,
    blocks: int,
    max_len: int,
) -> SentenceEncoderParams:
    return SentenceEncoderParams(
        token_embedding=parameter(rng.normal(0.0, EMBEDDING_INIT_STD, (vocab_size, d_model))),
        positional=sinusoidal_positions(max_len, d_model),
        blocks=[init_block(rng, d_model, heads) for _ in range(blocks)],
    )


def init_paragraph_encoder(
    rng: np.random.Generator, d_model: int, heads: int, blocks: int
) -> ParagraphEncoderParams:
    return ParagraphEncoderParams(
        blocks=[init_block(rng, d_model, heads) for _ in range(blocks)]
    )


# --------------------------------------------------------------------------
# forward operations
# --------------------------------------------------------------------------


def group_mask(group_sizes: Sequence[int]) -> np.ndarray:
    """Block-diagonal boolean mask letting rows attend only within their group."""
    groups = np.repeat(np.arange(len(group_sizes)), group_sizes)
    return groups[:, None] == groups[None, :]


def attention(q: Tensor, k: Tensor, v: Tensor, mask: Mask = None) -> Tensor:
    """``softmax(Q Kᵀ / sqrt(d_k)) V``; masked keys (False) are excluded."""
    if q.values.ndim != 2 or k.values.ndim != 2 or v.values.ndim != 2:
        raise ShapeError("attention expects matrices for Q, K and V")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"attention: query width {q.shape} != key width {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: {k.shape[0]} keys but {v.shape[0]} values")
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape not in ((k.shape[0],), (q.shape[0], k.shape[0])):
            raise ShapeError(
                f"attention mask {keep.shape} must be ({k.shape[0]},) or "
                f"({q.shape[0]}, {k.shape[0]})"
            )
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return matmul(softmax_rows(scores, mask), v)


def multi_head(x: Tensor, p: AttentionParams, mask: Mask = None) -> Tensor:
    """Self-attention per head on projected ``x``; heads concatenated then projected."""
    heads = [
        attention(matmul(x, wq), matmul(x, wk), matmul(x, wv), mask)
        for wq, wk, wv in zip(p.w_q, p.w_k, p.w_v)
    ]
    merged = heads[0] if len(heads) == 1 else concat_cols(heads)
    return matmul(merged, p.w_o)


def feed_forward(x: Tensor, b: TransformerBlock) -> Tensor:
    hidden = relu(add(matmul(x, b.ff_w1), b.ff_b1))
    return add(matmul(hidden, b.ff_w2), b.ff_b2)


def transformer_block(x: Tensor, b: TransformerBlock, mask: Mask = None) -> Tensor:
    """``LayerNorm(x + MultiHead(x))`` followed by ``LayerNorm(h + FFN(h))``."""
    if x.values.ndim != 2 or x.shape[1] != b.d_model:
        raise ShapeError(f"block expects (n, {b.d_model}) input, got {x.shape}")
    h = layer_norm(add(x, multi_head(x, b.attention, mask)), b.ln1_gain, b.ln1_bias)
    return layer_norm(add(h, feed_forward(h, b)), b.ln2_gain, b.ln2_bias)


def _validate_tokens(tokens: Sequence[int], p: SentenceEncoderParams) -> np.ndarray:
    ids = np.asarray(list(tokens), dtype=np.int64)
    if ids.size == 0:
        raise InputError("cannot encode an empty sentence")
    if ids.size > p.max_len:
        raise InputError(f"sentence of {ids.size} tokens exceeds max_len={p.max_len}")
    if ids.min() < 0 or ids.max() >= p.vocab_size:
        bad = [int(t) for t in ids if t < 0 or t >= p.vocab_size]
        raise InputError(f"unknown token ids {bad} (vocabulary size {p.vocab_size})")
    return ids


def encode_sentences(
    sentences: Sequence[Sequence[int]], p: SentenceEncoderParams
) -> Tensor:
    """Encode many sentences at once; row ``i`` is the vector of sentence ``i``."""
    if not sentences:
        raise InputError("no sentences to encode")
    ids = [_validate_tokens(tokens, p) for tokens in sentences]
    lengths = np.array([len(t) for t in ids])
    flat_ids = np.concatenate(ids)
    word_positions = np.concatenate([np.arange(n) for n in lengths])

    x = add(take_rows(p.token_embedding, flat_ids), constant(p.positional[word_positions]))
    mask = group_mask(lengths) if len(ids) > 1 else None
    for block in p.blocks:
        x = transformer_block(x, block, mask)

    groups = np.repeat(np.arange(len(ids)), lengths)
    pool = np.zeros((len(ids), flat_ids.size))
    pool[groups, np.arange(flat_ids.size)] = 1.0 / lengths[groups]
    return matmul(constant(pool), x)


def encode_sentence(tokens: Sequence[int], p: SentenceEncoderParams) -> Tensor:
    """Encode one sentence into a ``d_model`` vector (mean of its token outputs)."""
    vectors = encode_sentences([tokens], p)
    return reshape(vectors, (vectors.shape[1],))


def encode_paragraph(
    sentence_vecs: Tensor, p: ParagraphEncoderParams, mask: Mask = None
) -> Tensor:
    """Contextualise sentence vectors; row ``k`` stays the representation of input ``k``."""
    if sentence_vecs.values.ndim != 2 or sentence_vecs.shape[0] < 1:
        raise ShapeError(f"paragraph encoder expects (m, d) input, got {sentence_vecs.shape}")
    x = sentence_vecs
    for block in p.blocks:
        x = transformer_block(x, block, mask)
    return x
