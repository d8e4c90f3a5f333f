"""
Integration tests for full-model gradient verification.
"""

import logging

import numpy as np
import orjson
import pytest

from ranker.cli import gradcheck_paragraph, main, run_gradcheck
from ranker.constants import EXIT_OK, EXIT_VALIDATION_FAILURE, GRADCHECK_THRESHOLD
from ranker.losses import LossKind, gold_scores, pointwise_loss
from ranker.tensor_core import constant, finite_diff_check, matmul, parameter, reshape

logger = logging.getLogger(__name__)


@pytest.fixture(scope="module")
def results():
    return run_gradcheck(0, step=1e-5, max_coords=300, margin=1.0)


@pytest.mark.parametrize("kind", [k.value for k in LossKind])
def test_every_loss_matches_finite_differences(results, kind):
    result = results[kind]
    logger.info("%s: max relative error %.3e", kind, result["max_rel_error"])
    assert result["failure"] is None
    assert result["coords_checked"] == 300
    assert result["max_rel_error"] < GRADCHECK_THRESHOLD


def test_paragraph_is_reproducible():
    a = gradcheck_paragraph(4)
    b = gradcheck_paragraph(4)
    assert a.sentences == b.sentences
    assert a.gold_order == b.gold_order
    assert a.m == 3


def test_pointwise_linear_scorer():
    rng = np.random.default_rng(0)
    features = constant(rng.normal(size=(4, 3)))
    params = {"w": parameter(rng.normal(size=(3, 1)))}

    def loss_fn(p):
        return pointwise_loss(reshape(matmul(features, p["w"]), (4,)), gold_scores(4))

    report = finite_diff_check(loss_fn, params, 1e-5)
    assert report.ok
    assert report.max_rel_error < 1e-7


def test_command_passes(tmp_path, capsys):
    output = tmp_path / "gradcheck.json"
    code = main(["gradcheck", "--seed", "1", "--max-coords", "150", "--output", str(output)])
    assert code == EXIT_OK
    payload = orjson.loads(output.read_bytes())
    assert set(payload["results"]) == {k.value for k in LossKind}
    assert all(r["passed"] for r in payload["results"].values())
    assert orjson.loads(capsys.readouterr().out) == payload


def test_corrupted_gradient_fails(capsys):
    code = main(["gradcheck", "--max-coords", "50", "--corrupt-gradient"])
    assert code == EXIT_VALIDATION_FAILURE
    payload = orjson.loads(capsys.readouterr().out)
    assert not any(r["passed"] for r in payload["results"].values())
