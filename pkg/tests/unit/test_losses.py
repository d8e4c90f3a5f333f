"""
Unit tests for the ranking losses and gold scores.
"""

import itertools
import math

import numpy as np
import pytest
from pydantic import ValidationError

from ranker.errors import ContractError, InputError
from ranker.losses import (
    GoldScores,
    LossKind,
    LossSpec,
    gold_entropy,
    gold_scores,
    listmle_loss,
    listnet_loss,
    pairwise_loss,
    paragraph_loss,
    pointwise_loss,
)
from ranker.tensor_core import GraphTape, backward, parameter


class TestGoldScores:
    def test_five_sentences(self):
        assert gold_scores(5).values == pytest.approx((0.0, 0.25, 0.5, 0.75, 1.0))

    def test_endpoints_only(self):
        assert gold_scores(2).values == (0.0, 1.0)

    def test_thirds(self):
        assert gold_scores(4).values == pytest.approx((0.0, 1 / 3, 2 / 3, 1.0))

    def test_too_short(self):
        with pytest.raises(InputError):
            gold_scores(1)

    def test_rejects_non_monotone(self):
        with pytest.raises(InputError):
            GoldScores((0.0, 0.7, 0.5, 1.0))


class TestLossSpec:
    def test_defaults(self):
        spec = LossSpec()
        assert spec.kind is LossKind.LISTMLE
        assert spec.margin == 1.0

    def test_margin_must_be_positive(self):
        with pytest.raises(ValidationError):
            LossSpec(kind="pairwise", margin=0.0)

    def test_only_listmle_sorts_descending(self):
        assert [k.descending for k in LossKind] == [False, False, False, True]


class TestPointwise:
    def test_perfect_scores(self):
        assert pointwise_loss([0.0, 0.5, 1.0], gold_scores(3)).item() == 0.0

    def test_flat_scores(self):
        assert pointwise_loss([0.0, 0.0], [0.0, 1.0]).item() == pytest.approx(0.5)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            pointwise_loss([0.0, 0.0, 0.0], gold_scores(2))


class TestPairwise:
    def test_margin_satisfied(self):
        assert pairwise_loss([0.0, 2.0], margin=1.0).item() == 0.0

    def test_flat_scores_pay_the_margin(self):
        assert pairwise_loss([0.0, 0.0], margin=1.0).item() == pytest.approx(1.0)

    def test_margins_exactly_met(self):
        assert pairwise_loss([0.0, 1.0, 2.0], margin=1.0).item() == 0.0

    def test_mean_over_pairs(self):
        # hinges 2 and 0, averaged over the two consecutive pairs
        assert pairwise_loss([1.0, 0.0, 5.0], margin=1.0).item() == pytest.approx(1.0)

    def test_zero_exactly_when_every_margin_met(self):
        rng = np.random.default_rng(23)
        outcomes = set()
        for _ in range(300):
            m = int(rng.integers(2, 7))
            margin = float(rng.uniform(0.1, 2.0))
            # keep gaps clear of the margin so rounding cannot flip the comparison
            offsets = rng.uniform(1e-3, 1.0, size=m - 1) * rng.choice([-1.0, 1.0], size=m - 1, p=[0.2, 0.8])
            z = rng.normal() + np.concatenate([[0.0], np.cumsum(margin + offsets)])
            all_met = bool(np.all(np.diff(z) >= margin))
            outcomes.add(all_met)
            assert (pairwise_loss(z, margin=margin).item() == 0.0) == all_met
        assert outcomes == {True, False}

    def test_too_short(self):
        with pytest.raises(InputError):
            pairwise_loss([0.3])


class TestListNet:
    def test_matching_scores_reach_entropy(self):
        y = gold_scores(4)
        assert listnet_loss(list(y.values), y).item() == pytest.approx(gold_entropy(y), abs=1e-12)

    def test_flat_scores(self):
        assert listnet_loss([0.0, 0.0], [0.0, 1.0]).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_never_below_entropy(self):
        rng = np.random.default_rng(5)
        y = gold_scores(5)
        floor = gold_entropy(y)
        for _ in range(50):
            assert listnet_loss(rng.normal(size=5), y).item() >= floor - 1e-12

    def test_large_scores_stay_finite(self):
        assert math.isfinite(listnet_loss([1000.0, -1000.0, 0.0], gold_scores(3)).item())

    def test_constant_shift_leaves_loss_unchanged(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            m = int(rng.integers(2, 7))
            z = rng.normal(size=m)
            y = gold_scores(m)
            shift = rng.normal(0.0, 50.0)
            assert listnet_loss(z + shift, y).item() == pytest.approx(listnet_loss(z, y).item(), abs=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            listnet_loss([0.0, 0.0], gold_scores(3))


class TestListMLE:
    def test_single_sentence(self):
        assert listmle_loss([0.7], [1]).item() == 0.0

    def test_two_sentences_closed_form(self):
        value = listmle_loss([2.0, 1.0], [1, 2]).item()
        assert value == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-12)
        assert value == pytest.approx(0.3133, abs=1e-4)

    @pytest.mark.parametrize("m", [2, 3, 5, 8])
    def test_equal_scores_give_log_factorial(self, m):
        order = list(range(1, m + 1))
        assert listmle_loss([0.4] * m, order).item() == pytest.approx(
            math.log(math.factorial(m)), abs=1e-12
        )

    def test_follows_correct_order(self):
        # sentence 2 belongs first, so the high score on index 2 is rewarded
        good = listmle_loss([0.0, 5.0], [2, 1]).item()
        bad = listmle_loss([0.0, 5.0], [1, 2]).item()
        assert good < bad

    def test_likelihoods_sum_to_one(self):
        z = [0.3, -1.2, 2.0]
        total = sum(
            math.exp(-listmle_loss(z, [i + 1 for i in perm]).item())
            for perm in itertools.permutations(range(3))
        )
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_large_scores_stay_finite(self):
        assert math.isfinite(listmle_loss([800.0, -800.0, 0.0], [2, 3, 1]).item())

    def test_constant_shift_leaves_loss_unchanged(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            m = int(rng.integers(2, 7))
            z = rng.normal(size=m)
            order = [int(i) + 1 for i in rng.permutation(m)]
            shift = rng.normal(0.0, 50.0)
            assert listmle_loss(z + shift, order).item() == pytest.approx(
                listmle_loss(z, order).item(), abs=1e-10
            )

    def test_first_sentence_gradient_is_negative(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            m = int(rng.integers(2, 7))
            gold = [int(i) + 1 for i in rng.permutation(m)]
            z = parameter(rng.normal(0.0, 3.0, size=m))
            with GraphTape() as tape:
                loss = paragraph_loss(z, gold, LossSpec())
            backward(loss, tape)
            assert z.grad[gold.index(1)] < 0.0

    def test_invalid_permutation(self):
        with pytest.raises(ContractError):
            listmle_loss([0.0, 1.0, 2.0], [1, 1, 2])


class TestParagraphLoss:
    def test_pointwise_uses_correct_positions(self):
        # presented sentence 0 belongs third, so its ideal score is 1
        scores = parameter([1.0, 0.0, 0.5])
        loss = paragraph_loss(scores, [3, 1, 2], LossSpec(kind="pointwise"))
        assert loss.item() == 0.0

    def test_pairwise_uses_correct_positions(self):
        scores = parameter([2.0, 0.0, 1.0])
        loss = paragraph_loss(scores, [3, 1, 2], LossSpec(kind="pairwise", margin=1.0))
        assert loss.item() == 0.0

    def test_listmle_matches_direct_call(self):
        scores = [0.5, 2.0, -1.0]
        # presented sentence 1 is first, sentence 0 second, sentence 2 third
        via_gold = paragraph_loss(parameter(scores), [2, 1, 3], LossSpec()).item()
        assert via_gold == pytest.approx(listmle_loss(scores, [2, 1, 3]).item(), abs=1e-15)

    def test_rejects_bad_gold_order(self):
        with pytest.raises(ContractError):
            paragraph_loss(parameter([0.0, 1.0]), [2, 2], LossSpec())

    @pytest.mark.parametrize("kind", list(LossKind))
    def test_gradients_match_finite_differences(self, kind):
        rng = np.random.default_rng(17)
        base = rng.normal(size=5)
        gold = [3, 5, 1, 2, 4]
        spec = LossSpec(kind=kind, margin=0.5)

        z = parameter(base.copy())
        with GraphTape() as tape:
            loss = paragraph_loss(z, gold, spec)
        backward(loss, tape)

        step = 1e-6
        numeric = np.zeros(5)
        for i in range(5):
            up, down = base.copy(), base.copy()
            up[i] += step
            down[i] -= step
            numeric[i] = (
                paragraph_loss(parameter(up), gold, spec).item()
                - paragraph_loss(parameter(down), gold, spec).item()
            ) / (2 * step)
        np.testing.assert_allclose(z.grad, numeric, atol=1e-6)
