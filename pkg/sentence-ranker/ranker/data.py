"""
Corpus formats, seeded shuffling and synthetic paragraph generation.

Corpus files are JSON lines, one paragraph per line, in one of two modes:

* tokens:     {"id": str, "sentences": [[int, ...], ...], "gold_order": [int, ...]}
* embeddings: {"id": str, "embeddings": [[float, ...], ...], "gold_order": [int, ...]}

``gold_order`` is 1-based: ``gold_order[i]`` is the correct position of the
sentence presented at index ``i``. An optional ``shuffle_seed`` records how
the presented order was drawn. A file is entirely one mode.

Vocabulary files hold one token per line; the line number is the id and
ids 0 and 1 are reserved for padding and unknown tokens.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, ValidationError

from .config import SynthSpec
from .constants import MIN_SENTENCES, PAD_TOKEN, UNK_ID, UNK_TOKEN
from .errors import CorpusFormatError, InputError
from .seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

CorpusMode = Literal["tokens", "embeddings"]
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Vocabulary:
    """Token strings indexed by id."""

    tokens: Tuple[str, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.tokens) < 2:
            raise InputError("vocabulary needs at least the PAD and UNK entries")
        index: Dict[str, int] = {}
        for i, token in enumerate(self.tokens):
            if token in index:
                raise InputError(f"duplicate vocabulary token {token!r} at id {i}")
            index[token] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, text: str) -> List[int]:
        """Whitespace-split pre-tokenized text into ids."""
        return [self.id_of(token) for token in text.split()]

    @classmethod
    def synthetic(cls, size: int, key_positions: int) -> "Vocabulary":
        keys = [f"pos_{k:02d}" for k in range(key_positions)]
        fillers = [f"w_{i:03d}" for i in range(size - 2 - key_positions)]
        return cls(tuple([PAD_TOKEN, UNK_TOKEN, *keys, *fillers]))


def load_vocabulary(path: Union[str, Path]) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        return Vocabulary(tuple(line.strip() for line in lines if line.strip()))
    except InputError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from exc


def write_vocabulary(vocabulary: Vocabulary, path: Union[str, Path]) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text("".join(f"{token}\n" for token in vocabulary.tokens), encoding="utf-8")


def validate_permutation(order: Sequence[int], m: int) -> Tuple[int, ...]:
    """Return ``order`` as a tuple, or raise naming the first duplicate or gap."""
    values = tuple(int(v) for v in order)
    if len(values) != m:
        raise InputError(f"gold_order has {len(values)} entries for {m} sentences")
    seen = set()
    for v in values:
        if v < 1 or v > m:
            raise InputError(f"gold_order entry {v} outside 1..{m}")
        if v in seen:
            raise InputError(f"gold_order has duplicate position {v}")
        seen.add(v)
    return values


@dataclass(frozen=True, eq=False)
class Paragraph:
    """Sentences in presented order plus the bookkeeping to recover the correct order."""

    id: str
    gold_order: Tuple[int, ...]
    sentences: Optional[Tuple[Tuple[int, ...], ...]] = None
    embeddings: Optional[np.ndarray] = field(default=None, repr=False)
    shuffle_seed: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.sentences is None) == (self.embeddings is None):
            raise InputError(f"paragraph {self.id!r} needs exactly one of sentences or embeddings")
        m = self.m
        if m < MIN_SENTENCES:
            raise InputError(f"paragraph {self.id!r} has {m} sentence(s); at least 2 required")
        validate_permutation(self.gold_order, m)
        if self.sentences is not None and any(len(s) == 0 for s in self.sentences):
            raise InputError(f"paragraph {self.id!r} contains an empty sentence")
        if self.embeddings is not None and self.embeddings.ndim != 2:
            raise InputError(f"paragraph {self.id!r} embeddings must be an (m, d) matrix")

    @property
    def m(self) -> int:
        if self.sentences is not None:
            return len(self.sentences)
        assert self.embeddings is not None
        return int(self.embeddings.shape[0])

    @property
    def mode(self) -> CorpusMode:
        return "tokens" if self.sentences is not None else "embeddings"

    def correct_order(self) -> Tuple[int, ...]:
        """0-based presented indices listed in their correct sequence."""
        return tuple(int(i) for i in np.argsort(self.gold_order, kind="stable"))

    def reordered(self, perm: Sequence[int], shuffle_seed: Optional[int] = None) -> "Paragraph":
        """Present ``self``'s sentence ``perm[i]`` at index ``i``."""
        idx = [int(i) for i in perm]
        if sorted(idx) != list(range(self.m)):
            raise InputError(f"{idx} is not a permutation of 0..{self.m - 1}")
        return replace(
            self,
            gold_order=tuple(self.gold_order[i] for i in idx),
            sentences=None if self.sentences is None else tuple(self.sentences[i] for i in idx),
            embeddings=None if self.embeddings is None else self.embeddings[idx].copy(),
            shuffle_seed=shuffle_seed,
        )

    def in_gold_order(self) -> "Paragraph":
        """The same paragraph presented in its correct order (gold order is the identity)."""
        return self.reordered(self.correct_order())

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"id": self.id}
        if self.sentences is not None:
            record["sentences"] = [list(s) for s in self.sentences]
        else:
            assert self.embeddings is not None
            record["embeddings"] = self.embeddings.tolist()
        record["gold_order"] = list(self.gold_order)
        if self.shuffle_seed is not None:
            record["shuffle_seed"] = self.shuffle_seed
        return record


@dataclass(frozen=True)
class Corpus:
    """An immutable, homogeneous list of paragraphs."""

    paragraphs: Tuple[Paragraph, ...]
    split: Optional[str] = None
    vocabulary: Optional[Vocabulary] = None

    def __post_init__(self) -> None:
        modes = {p.mode for p in self.paragraphs}
        if len(modes) > 1:
            raise InputError("corpus mixes token and embedding paragraphs")
        if self.vocabulary is not None:
            size = len(self.vocabulary)
            for p in self.paragraphs:
                for sentence in p.sentences or ():
                    if max(sentence) >= size or min(sentence) < 0:
                        raise InputError(
                            f"paragraph {p.id!r} uses token ids outside the "
                            f"vocabulary of {size}"
                        )

    def __len__(self) -> int:
        return len(self.paragraphs)

    def __iter__(self) -> Iterator[Paragraph]:
        return iter(self.paragraphs)

    @property
    def mode(self) -> Optional[CorpusMode]:
        return self.paragraphs[0].mode if self.paragraphs else None

    @property
    def embedding_dim(self) -> Optional[int]:
        if self.mode != "embeddings":
            return None
        first = self.paragraphs[0].embeddings
        assert first is not None
        return int(first.shape[1])


class _TokenRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    sentences: List[List[int]]
    gold_order: List[int]
    shuffle_seed: Optional[int] = None


class _EmbeddingRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    embeddings: List[List[float]]
    gold_order: List[int]
    shuffle_seed: Optional[int] = None


def _split_from_path(path: Path) -> Optional[str]:
    stem = path.stem.lower()
    return stem if stem in SPLITS else None


def _parse_line(raw: Dict[str, Any], line_number: int) -> Tuple[CorpusMode, Optional[Paragraph]]:
    has_tokens = "sentences" in raw
    has_vectors = "embeddings" in raw
    if has_tokens == has_vectors:
        raise CorpusFormatError(
            "record needs exactly one of 'sentences' or 'embeddings'",
            line_number=line_number,
        )
    mode: CorpusMode = "tokens" if has_tokens else "embeddings"
    try:
        record: Union[_TokenRecord, _EmbeddingRecord] = (
            _TokenRecord.model_validate(raw) if has_tokens else _EmbeddingRecord.model_validate(raw)
        )
    except ValidationError as exc:
        raise CorpusFormatError(f"invalid record: {exc}", line_number=line_number) from exc

    m = len(record.sentences) if isinstance(record, _TokenRecord) else len(record.embeddings)
    if m < MIN_SENTENCES:
        return mode, None

    try:
        validate_permutation(record.gold_order, m)
        if isinstance(record, _TokenRecord):
            paragraph = Paragraph(
                id=record.id,
                gold_order=tuple(record.gold_order),
                sentences=tuple(tuple(s) for s in record.sentences),
                shuffle_seed=record.shuffle_seed,
            )
        else:
            widths = {len(row) for row in record.embeddings}
            if len(widths) != 1 or 0 in widths:
                raise InputError("embedding rows must share one positive width")
            paragraph = Paragraph(
                id=record.id,
                gold_order=tuple(record.gold_order),
                embeddings=np.asarray(record.embeddings, dtype=np.float64),
                shuffle_seed=record.shuffle_seed,
            )
    except InputError as exc:
        raise CorpusFormatError(str(exc), line_number=line_number, paragraph_id=record.id) from exc
    return mode, paragraph


def load_corpus(
    path: Union[str, Path],
    *,
    split: Optional[str] = None,
    vocabulary: Optional[Vocabulary] = None,
) -> Corpus:
    """Parse a JSON-lines corpus; paragraphs with fewer than 2 sentences are dropped."""
    corpus_path = Path(path)
    paragraphs: List[Paragraph] = []
    mode: Optional[CorpusMode] = None
    rejected = 0
    dims = set()

    with corpus_path.open("rb") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = orjson.loads(line)
            except orjson.JSONDecodeError as exc:
                raise CorpusFormatError(f"malformed JSON: {exc}", line_number=line_number) from exc
            if not isinstance(raw, dict):
                raise CorpusFormatError("record must be a JSON object", line_number=line_number)

            line_mode, paragraph = _parse_line(raw, line_number)
            if mode is None:
                mode = line_mode
            elif line_mode != mode:
                raise CorpusFormatError(
                    f"{line_mode} record in a {mode} corpus; files may not mix modes",
                    line_number=line_number,
                )
            if paragraph is None:
                rejected += 1
                continue
            if paragraph.embeddings is not None:
                dims.add(paragraph.embeddings.shape[1])
                if len(dims) > 1:
                    raise CorpusFormatError(
                        f"embedding width changes to {paragraph.embeddings.shape[1]}",
                        line_number=line_number,
                        paragraph_id=paragraph.id,
                    )
            paragraphs.append(paragraph)

    if rejected:
        logger.warning(
            "Rejected %d paragraph(s) with fewer than %d sentences in %s",
            rejected,
            MIN_SENTENCES,
            corpus_path,
        )
    try:
        corpus = Corpus(
            paragraphs=tuple(paragraphs),
            split=split or _split_from_path(corpus_path),
            vocabulary=vocabulary,
        )
    except InputError as exc:
        raise CorpusFormatError(f"{corpus_path}: {exc}") from exc
    logger.info("Loaded %d paragraphs (%s mode) from %s", len(corpus), mode, corpus_path)
    return corpus


def write_corpus(corpus: Corpus, path: Union[str, Path]) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("wb") as handle:
        for paragraph in corpus:
            handle.write(orjson.dumps(paragraph.to_record()))
            handle.write(b"\n")
    logger.info("Wrote %d paragraphs to %s", len(corpus), target)


def shuffle_paragraph(p: Paragraph, seed: int) -> Paragraph:
    """Present the sentences in a uniformly random, seed-determined order."""
    perm = np.random.default_rng(seed).permutation(p.m)
    return p.reordered(perm.tolist(), shuffle_seed=seed)


def synth_generate(spec: SynthSpec, split: str = "train") -> Corpus:
    """Generate one split of a synthetic corpus.

    Sentence ``k`` (0-based correct position) starts with the key token of
    position ``k`` with probability ``spec.signal``, otherwise with a random
    filler token, followed by random filler tokens. Paragraphs are stored
    shuffled with their gold order recorded.
    """
    if split not in SPLITS:
        raise InputError(f"unknown split {split!r}; expected one of {SPLITS}")
    vocabulary = Vocabulary.synthetic(spec.vocab_size, spec.max_sentences)
    first_filler = 2 + spec.max_sentences
    fillers = np.arange(first_filler, spec.vocab_size)
    rng = make_rng(spec.seed, "data", split)

    paragraphs: List[Paragraph] = []
    for n in range(spec.split_sizes()[split]):
        m = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
        sentences = []
        for k in range(m):
            lead = 2 + k if rng.random() < spec.signal else int(rng.choice(fillers))
            count = int(rng.integers(spec.min_filler, spec.max_filler + 1))
            tail = rng.choice(fillers, size=count).tolist()
            sentences.append(tuple([lead, *tail]))
        ordered = Paragraph(
            id=f"{split}-{n:05d}",
            gold_order=tuple(range(1, m + 1)),
            sentences=tuple(sentences),
        )
        paragraphs.append(shuffle_paragraph(ordered, derive_seed(spec.seed, "shuffle", split, n)))

    logger.debug("Generated %d %s paragraphs (signal=%.2f)", len(paragraphs), split, spec.signal)
    return Corpus(paragraphs=tuple(paragraphs), split=split, vocabulary=vocabulary)


def synth_generate_splits(spec: SynthSpec) -> Dict[str, Corpus]:
    return {split: synth_generate(spec, split) for split in SPLITS}
