"""
Order discrimination: tell an original paragraph from a permuted copy.

Both members are ordered by the model and each predicted order is scored
with Kendall's tau against the order the sentences were presented in. The
member with the higher tau is taken to be the original; a tie counts as a
miss.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Hashable, List, Sequence, Tuple

import numpy as np

from .data import Corpus, Paragraph
from .errors import InputError
from .losses import LossKind
from .metrics import kendall_tau
from .model import RankingModel
from .seeding import make_rng

logger = logging.getLogger(__name__)


class Verdict(str, Enum):
    ORIGINAL_FIRST = "original-first"
    PERMUTED_FIRST = "permuted-first"


def _content(p: Paragraph) -> Tuple[Hashable, ...]:
    if p.sentences is not None:
        return tuple(p.sentences)
    assert p.embeddings is not None
    return tuple(tuple(row) for row in p.embeddings.tolist())


@dataclass(frozen=True)
class DiscriminationPair:
    """A paragraph in its original order and a shuffled copy of it."""

    pair_id: str
    original: Paragraph
    permuted: Paragraph

    def __post_init__(self) -> None:
        if self.original.m != self.permuted.m:
            raise InputError(f"pair {self.pair_id!r} members differ in length")
        if _content(self.original) == _content(self.permuted):
            raise InputError(f"pair {self.pair_id!r}: permuted copy equals the original")


@dataclass(frozen=True)
class DiscriminationResult:
    pair_id: str
    verdict: Verdict
    tau_original: float
    tau_permuted: float

    @property
    def correct(self) -> bool:
        return self.verdict is Verdict.ORIGINAL_FIRST

    @property
    def tie(self) -> bool:
        return self.tau_original == self.tau_permuted


@dataclass(frozen=True)
class DiscriminationReport:
    accuracy: float
    n_pairs: int
    ties: int
    correct: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def classify(tau_original: float, tau_permuted: float) -> Verdict:
    """Higher tau wins; equal taus are resolved against the original."""
    if tau_original > tau_permuted:
        return Verdict.ORIGINAL_FIRST
    return Verdict.PERMUTED_FIRST


def build_pairs(corpus: Corpus, pairs_per_paragraph: int, seed: int) -> List[DiscriminationPair]:
    """Draw ``pairs_per_paragraph`` non-identity shuffles of every paragraph."""
    if pairs_per_paragraph < 1:
        raise InputError(f"pairs_per_paragraph must be positive, got {pairs_per_paragraph}")
    rng = make_rng(seed, "pairs")
    pairs: List[DiscriminationPair] = []
    skipped = 0

    for paragraph in corpus:
        if paragraph.m < 2:
            skipped += 1
            continue
        original = paragraph.in_gold_order()
        content = _content(original)
        if len(set(content)) == 1:
            # every sentence identical: no shuffle can change the text
            skipped += 1
            continue
        for j in range(pairs_per_paragraph):
            while True:
                perm = rng.permutation(original.m)
                if np.any(perm != np.arange(original.m)):
                    permuted = original.reordered(perm.tolist())
                    if _content(permuted) != content:
                        break
            pairs.append(
                DiscriminationPair(
                    pair_id=f"{paragraph.id}-{j}", original=original, permuted=permuted
                )
            )

    if skipped:
        logger.warning("Skipped %d paragraph(s) that cannot form a permuted pair", skipped)
    return pairs


def _identity_tau(order: Sequence[int]) -> float:
    return kendall_tau(order, list(range(1, len(order) + 1)))


def discriminate(
    pair: DiscriminationPair, model: RankingModel, loss_kind: LossKind
) -> DiscriminationResult:
    tau_o = _identity_tau(model.predict(pair.original, loss_kind).predicted_order)
    tau_p = _identity_tau(model.predict(pair.permuted, loss_kind).predicted_order)
    return DiscriminationResult(
        pair_id=pair.pair_id,
        verdict=classify(tau_o, tau_p),
        tau_original=tau_o,
        tau_permuted=tau_p,
    )


def summarise_results(results: Sequence[DiscriminationResult]) -> DiscriminationReport:
    if not results:
        raise InputError("no discrimination pairs to score")
    correct = sum(1 for r in results if r.correct)
    return DiscriminationReport(
        accuracy=correct / len(results),
        n_pairs=len(results),
        ties=sum(1 for r in results if r.tie),
        correct=correct,
    )


def discriminate_all(
    pairs: Sequence[DiscriminationPair],
    model: RankingModel,
    loss_kind: LossKind,
    threads: int = 1,
) -> Tuple[DiscriminationReport, List[DiscriminationResult]]:
    if threads <= 1:
        results = [discriminate(pair, model, loss_kind) for pair in pairs]
    else:
        with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="ranker-disc") as pool:
            results = list(pool.map(lambda pair: discriminate(pair, model, loss_kind), pairs))
    report = summarise_results(results)
    logger.info(
        "Discrimination accuracy %.4f over %d pairs (%d ties)",
        report.accuracy,
        report.n_pairs,
        report.ties,
    )
    return report, results
