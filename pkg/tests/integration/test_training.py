"""
Integration tests for the training loop: determinism, learning-rate
routing, checkpoint resume and loss improvement on synthetic data.
"""

import logging

import numpy as np
import orjson
import pytest

from ranker.checkpoint import last_checkpoint_path, load_checkpoint
from ranker.config import OptimizerConfig
from ranker.data import Corpus
from ranker.errors import ConfigError, InputError
from ranker.losses import LossKind, LossSpec
from ranker.model import RankingModel, init_model
from ranker.training import corpus_loss, evaluate, summarise, train

logger = logging.getLogger(__name__)


def _fresh_model(config, seed=11):
    return RankingModel(init_model(config, seed))


def _run(tmp_path, name, splits, config, cfg, loss=None, **kwargs):
    model = _fresh_model(config)
    result = train(
        splits["train"],
        splits["val"],
        model,
        loss or LossSpec(),
        cfg,
        checkpoint_path=tmp_path / f"{name}.ckpt",
        log_path=tmp_path / f"{name}.log.jsonl",
        config_echo={"run": "test"},
        **kwargs,
    )
    return model, result


class TestDeterminism:
    def test_identical_runs_write_identical_files(self, tmp_path, small_splits, tiny_model_config, quick_optimizer):
        _run(tmp_path, "a", small_splits, tiny_model_config, quick_optimizer)
        _run(tmp_path, "b", small_splits, tiny_model_config, quick_optimizer)
        for suffix in (".ckpt", ".ckpt.last", ".log.jsonl"):
            a = (tmp_path / f"a{suffix}").read_bytes()
            b = (tmp_path / f"b{suffix}").read_bytes()
            assert a == b, f"{suffix} differs between identical runs"

    def test_evaluation_independent_of_threads(self, small_splits, tiny_model_config):
        model = _fresh_model(tiny_model_config)
        serial = evaluate(model, small_splits["test"], LossKind.LISTMLE, threads=1)
        parallel = evaluate(model, small_splits["test"], LossKind.LISTMLE, threads=4)
        assert serial == parallel


class TestLearningRates:
    def test_zero_learning_rate_changes_nothing(self, small_splits, tiny_model_config):
        cfg = OptimizerConfig(lr_encoder=0.0, lr_decoder=0.0, batch_size=8, epochs=2, seed=1)
        model = _fresh_model(tiny_model_config)
        before = model.params.state_dict()
        result = train(small_splits["train"], small_splits["val"], model, LossSpec(), cfg)
        after = model.params.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)
        assert result.history[0].val_tau == result.history[1].val_tau

    def test_zero_decoder_rate_freezes_decoder_only(self, small_splits, tiny_model_config):
        cfg = OptimizerConfig(lr_encoder=1e-2, lr_decoder=0.0, batch_size=8, epochs=1, seed=1)
        model = _fresh_model(tiny_model_config)
        before = model.params.state_dict()
        train(small_splits["train"], small_splits["val"], model, LossSpec(kind="pointwise"), cfg)
        after = model.params.state_dict()
        for name in before:
            unchanged = np.array_equal(before[name], after[name])
            if name.startswith("decoder."):
                assert unchanged, name
        assert not np.array_equal(
            before["paragraph_encoder.blocks.0.ff_w1"], after["paragraph_encoder.blocks.0.ff_w1"]
        )

    def test_frozen_sentence_encoder_is_untouched(self, small_splits, tiny_model_config):
        cfg = OptimizerConfig(batch_size=8, epochs=1, seed=1, freeze_sentence_encoder=True)
        model = _fresh_model(tiny_model_config)
        before = model.params.state_dict()
        train(small_splits["train"], small_splits["val"], model, LossSpec(), cfg)
        after = model.params.state_dict()
        for name in before:
            if name.startswith("sentence_encoder."):
                assert np.array_equal(before[name], after[name]), name
        assert not np.array_equal(before["decoder.layers.0.weight"], after["decoder.layers.0.weight"])


class TestResume:
    def test_resume_matches_uninterrupted_run(self, tmp_path, small_splits, tiny_model_config):
        full_cfg = OptimizerConfig(batch_size=8, epochs=3, seed=2)
        full_model, full = _run(tmp_path, "full", small_splits, tiny_model_config, full_cfg)

        short_cfg = full_cfg.model_copy(update={"epochs": 1})
        _run(tmp_path, "part", small_splits, tiny_model_config, short_cfg)
        resume = load_checkpoint(last_checkpoint_path(tmp_path / "part.ckpt"))
        resumed_model, resumed = _run(
            tmp_path, "part", small_splits, tiny_model_config, full_cfg, resume=resume
        )

        expected = full_model.params.state_dict()
        actual = resumed_model.params.state_dict()
        for name in expected:
            assert np.array_equal(expected[name], actual[name]), name
        assert [e.train_loss for e in resumed.history] == [e.train_loss for e in full.history[1:]]
        assert [e.val_tau for e in resumed.history] == [e.val_tau for e in full.history[1:]]
        assert resumed.last.adam.step == full.last.adam.step

        epochs = [
            orjson.loads(line)["epoch"]
            for line in (tmp_path / "part.log.jsonl").read_bytes().splitlines()
            if orjson.loads(line)["event"] == "epoch"
        ]
        assert epochs == [1, 2, 3]

    def test_resume_rejects_other_loss(self, tmp_path, small_splits, tiny_model_config, quick_optimizer):
        _run(tmp_path, "r", small_splits, tiny_model_config, quick_optimizer)
        resume = load_checkpoint(tmp_path / "r.ckpt")
        with pytest.raises(ConfigError):
            train(
                small_splits["train"],
                small_splits["val"],
                _fresh_model(tiny_model_config),
                LossSpec(kind="listnet"),
                quick_optimizer,
                resume=resume,
            )


class TestTrain:
    def test_training_lowers_the_loss(self, small_splits, tiny_model_config):
        cfg = OptimizerConfig(batch_size=4, epochs=3, seed=4, lr_encoder=5e-3)
        model = _fresh_model(tiny_model_config)
        loss = LossSpec(kind="listmle")
        initial = corpus_loss(model, small_splits["train"], loss)
        train(small_splits["train"], small_splits["val"], model, loss, cfg)
        final = corpus_loss(model, small_splits["train"], loss)
        logger.info("Training loss %.4f -> %.4f", initial, final)
        assert final <= initial

    def test_log_records(self, tmp_path, small_splits, tiny_model_config, quick_optimizer):
        _, result = _run(tmp_path, "log", small_splits, tiny_model_config, quick_optimizer)
        lines = [orjson.loads(raw) for raw in (tmp_path / "log.log.jsonl").read_bytes().splitlines()]
        assert lines[0]["event"] == "config"
        assert lines[0]["config"] == {"run": "test"}
        assert [rec["epoch"] for rec in lines[1:]] == [1, 2]
        for record in lines[1:]:
            assert -1.0 <= record["val_tau"] <= 1.0
            assert 0.0 <= record["val_pmr"] <= min(record["val_first_acc"], record["val_last_acc"])
            assert record["config_digest"] == lines[0]["config_digest"]
        assert summarise(result.history)["epochs_run"] == 2

    def test_best_checkpoint_has_best_tau(self, tmp_path, small_splits, tiny_model_config, quick_optimizer):
        _, result = _run(tmp_path, "best", small_splits, tiny_model_config, quick_optimizer)
        saved = load_checkpoint(tmp_path / "best.ckpt")
        assert saved.val_tau == max(e.val_tau for e in result.history)
        assert saved.epoch == result.best.epoch

    def test_zero_epochs_keeps_initial_model(self, tmp_path, small_splits, tiny_model_config):
        cfg = OptimizerConfig(epochs=0)
        model, result = _run(tmp_path, "zero", small_splits, tiny_model_config, cfg)
        assert result.history == []
        saved = load_checkpoint(tmp_path / "zero.ckpt")
        assert saved.epoch == 0
        assert np.array_equal(
            saved.params.state_dict()["decoder.layers.0.weight"],
            model.params.state_dict()["decoder.layers.0.weight"],
        )

    def test_empty_split(self, small_splits, tiny_model_config, quick_optimizer):
        with pytest.raises(InputError):
            train(
                Corpus(paragraphs=()),
                small_splits["val"],
                _fresh_model(tiny_model_config),
                LossSpec(),
                quick_optimizer,
            )
