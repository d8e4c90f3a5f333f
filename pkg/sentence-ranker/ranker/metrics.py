"""
Ordering metrics: Kendall's tau, perfect match ratio and endpoint accuracy.

Orders are given as position lists: ``order[i]`` is the 1-based position of
presented sentence ``i``. Predicted and gold orders use the same convention.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

from .errors import ContractError

logger = logging.getLogger(__name__)

Order = Sequence[int]


@dataclass(frozen=True)
class EvalReport:
    """Corpus-level ordering quality."""

    tau_mean: float
    pmr: float
    first_acc: float
    last_acc: float
    n_paragraphs: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _check_permutation(order: Order, name: str) -> List[int]:
    values = [int(v) for v in order]
    if sorted(values) != list(range(1, len(values) + 1)):
        raise ContractError(f"{name} {values} is not a permutation of 1..{len(values)}")
    return values


def _merge_count(values: List[int]) -> Tuple[List[int], int]:
    if len(values) <= 1:
        return values, 0
    mid = len(values) // 2
    left, left_inv = _merge_count(values[:mid])
    right, right_inv = _merge_count(values[mid:])
    merged: List[int] = []
    inversions = left_inv + right_inv
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            # every remaining left element is greater than right[j]
            merged.append(right[j])
            inversions += len(left) - i
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged, inversions


def count_inversions(values: Sequence[int]) -> int:
    """Number of pairs ``i < j`` with ``values[i] > values[j]``, in O(n log n)."""
    return _merge_count(list(values))[1]


def count_inversions_bruteforce(values: Sequence[int]) -> int:
    n = len(values)
    return sum(1 for i in range(n) for j in range(i + 1, n) if values[i] > values[j])


def kendall_tau(predicted: Order, gold: Order) -> float:
    """``1 - 2 * inversions / C(m, 2)`` between two position lists."""
    pred = _check_permutation(predicted, "predicted order")
    ref = _check_permutation(gold, "gold order")
    m = len(ref)
    if len(pred) != m:
        raise ContractError(f"orders differ in length: {len(pred)} vs {m}")
    if m < 2:
        raise ContractError("Kendall's tau is undefined for fewer than 2 sentences")
    by_gold = sorted(range(m), key=lambda i: ref[i])
    inversions = count_inversions([pred[i] for i in by_gold])
    return 1.0 - 2.0 * inversions / (m * (m - 1) / 2)


def pmr(predicted: Sequence[Order], gold: Sequence[Order]) -> float:
    """Fraction of paragraphs predicted in exactly the gold order."""
    if len(predicted) != len(gold):
        raise ContractError(f"{len(predicted)} predictions for {len(gold)} paragraphs")
    if not gold:
        raise ContractError("PMR needs at least one paragraph")
    exact = sum(1 for p, g in zip(predicted, gold) if list(p) == list(g))
    return exact / len(gold)


def first_last_accuracy(
    predicted: Sequence[Order], gold: Sequence[Order]
) -> Tuple[float, float]:
    """Fraction of paragraphs whose first (and, separately, last) sentence is right."""
    if len(predicted) != len(gold):
        raise ContractError(f"{len(predicted)} predictions for {len(gold)} paragraphs")
    if not gold:
        raise ContractError("endpoint accuracy needs at least one paragraph")
    first_hits = last_hits = 0
    for p, g in zip(predicted, gold):
        p, g = list(p), list(g)
        m = len(g)
        first_hits += p.index(1) == g.index(1)
        last_hits += p.index(m) == g.index(m)
    return first_hits / len(gold), last_hits / len(gold)


def build_report(predicted: Sequence[Order], gold: Sequence[Order]) -> EvalReport:
    """Aggregate all metrics; single-sentence paragraphs are left out of the tau mean."""
    taus = [kendall_tau(p, g) for p, g in zip(predicted, gold) if len(g) >= 2]
    first_acc, last_acc = first_last_accuracy(predicted, gold)
    return EvalReport(
        tau_mean=sum(taus) / len(taus) if taus else 1.0,
        pmr=pmr(predicted, gold),
        first_acc=first_acc,
        last_acc=last_acc,
        n_paragraphs=len(gold),
    )
