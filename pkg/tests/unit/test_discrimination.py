"""
Unit tests for the order discrimination task.
"""

import numpy as np
import pytest

from ranker.data import Corpus, Paragraph
from ranker.discrimination import (
    DiscriminationPair,
    Verdict,
    build_pairs,
    classify,
    discriminate,
    discriminate_all,
)
from ranker.errors import InputError
from ranker.losses import LossKind
from ranker.model import RankingModel
from ranker.scorer import OrderPrediction


class _FixedOrders:
    """Stands in for a model: predicts a preset order per paragraph id."""

    def __init__(self, orders):
        self.orders = orders

    def predict(self, paragraph, loss_kind):
        order = self.orders[paragraph.id]
        return OrderPrediction(scores=tuple(0.0 for _ in order), predicted_order=order, loss_kind=loss_kind)


def _pair(m=3):
    original = Paragraph(
        id="orig", gold_order=tuple(range(1, m + 1)), sentences=tuple((k + 2,) for k in range(m))
    )
    permuted = original.reordered(list(reversed(range(m))))
    permuted = Paragraph(id="perm", gold_order=permuted.gold_order, sentences=permuted.sentences)
    return DiscriminationPair(pair_id="p", original=original, permuted=permuted)


class TestClassify:
    def test_higher_tau_wins(self):
        assert classify(1.0, 0.3) is Verdict.ORIGINAL_FIRST
        assert classify(-0.2, 0.3) is Verdict.PERMUTED_FIRST

    def test_tie_counts_against_original(self):
        assert classify(0.5, 0.5) is Verdict.PERMUTED_FIRST


class TestDiscriminate:
    def test_depends_only_on_predicted_orders(self):
        pair = _pair()
        orders = {"orig": (1, 2, 3), "perm": (2, 1, 3)}
        result = discriminate(pair, _FixedOrders(orders), LossKind.LISTMLE)
        assert result.tau_original == 1.0
        assert result.tau_permuted == pytest.approx(1 / 3)
        assert result.correct and not result.tie

        # the loss kind only matters through the orders it produces
        again = discriminate(pair, _FixedOrders(orders), LossKind.POINTWISE)
        assert again.verdict is result.verdict

    def test_perfect_model(self, oracle_params, oracle_corpus):
        model = RankingModel(oracle_params)
        for pair in build_pairs(oracle_corpus, 2, seed=1):
            result = discriminate(pair, model, LossKind.POINTWISE)
            assert result.tau_original == 1.0
            assert result.tau_permuted < 1.0
            assert result.verdict is Verdict.ORIGINAL_FIRST

    def test_constant_scores_tie_and_miss(self, oracle_params, oracle_corpus):
        oracle_params.decoder.weights[0].values[...] = 0.0
        model = RankingModel(oracle_params)
        report, results = discriminate_all(build_pairs(oracle_corpus, 1, seed=1), model, LossKind.LISTMLE)
        assert all(r.tie for r in results)
        assert report.accuracy == 0.0
        assert report.ties == report.n_pairs == len(oracle_corpus)

    def test_threads_do_not_change_results(self, oracle_params, oracle_corpus):
        model = RankingModel(oracle_params)
        pairs = build_pairs(oracle_corpus, 3, seed=2)
        serial = discriminate_all(pairs, model, LossKind.POINTWISE, threads=1)
        parallel = discriminate_all(pairs, model, LossKind.POINTWISE, threads=4)
        assert serial == parallel

    def test_report_dict(self, oracle_params, oracle_corpus):
        report, _ = discriminate_all(build_pairs(oracle_corpus, 1, seed=0), RankingModel(oracle_params), LossKind.POINTWISE)
        assert report.to_dict() == {"accuracy": 1.0, "n_pairs": 12, "ties": 0, "correct": 12}


class TestBuildPairs:
    def test_deterministic(self, small_splits):
        a = build_pairs(small_splits["test"], 2, seed=5)
        b = build_pairs(small_splits["test"], 2, seed=5)
        assert [p.pair_id for p in a] == [p.pair_id for p in b]
        assert [p.permuted.sentences for p in a] == [p.permuted.sentences for p in b]

    def test_count(self):
        paragraphs = tuple(
            Paragraph(id=f"p{n}", gold_order=(2, 1, 3), sentences=((2,), (3,), (4 + n,)))
            for n in range(10)
        )
        assert len(build_pairs(Corpus(paragraphs=paragraphs), 2, seed=0)) == 20

    def test_two_sentences_always_swap(self):
        paragraph = Paragraph(id="two", gold_order=(2, 1), sentences=((5,), (6,)))
        for pair in build_pairs(Corpus(paragraphs=(paragraph,)), 10, seed=3):
            assert pair.original.sentences == ((6,), (5,))
            assert pair.permuted.sentences == ((5,), (6,))

    def test_originals_are_in_gold_order(self, small_splits):
        for pair in build_pairs(small_splits["val"], 1, seed=0):
            assert pair.original.gold_order == tuple(range(1, pair.original.m + 1))
            assert pair.permuted.sentences != pair.original.sentences

    def test_identical_sentences_skipped(self, caplog):
        same = Paragraph(id="same", gold_order=(1, 2), sentences=((3,), (3,)))
        with caplog.at_level("WARNING", logger="ranker.discrimination"):
            assert build_pairs(Corpus(paragraphs=(same,)), 2, seed=0) == []
        assert "Skipped 1" in caplog.text

    def test_pair_rejects_unchanged_copy(self):
        p = Paragraph(id="x", gold_order=(1, 2), sentences=((3,), (4,)))
        with pytest.raises(InputError):
            DiscriminationPair(pair_id="x-0", original=p, permuted=p)

    def test_embedding_pairs(self, oracle_corpus):
        pairs = build_pairs(oracle_corpus, 1, seed=0)
        assert all(not np.array_equal(p.original.embeddings, p.permuted.embeddings) for p in pairs)
