"""
Mini-batch training with Adam, validation-based model selection and resume.

Every epoch shuffles the training paragraphs with a sub-seed derived from
the optimizer seed and the epoch number, so a run resumed from the
checkpoint of epoch ``k`` replays epochs ``k+1..`` exactly as an
uninterrupted run would.
"""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import orjson

from .checkpoint import Checkpoint, last_checkpoint_path, load_checkpoint, save_checkpoint
from .config import OptimizerConfig
from .data import Corpus
from .errors import ConfigError, InputError
from .losses import LossKind, LossSpec, paragraph_loss
from .metrics import EvalReport, build_report
from .model import RankingModel
from .optim import AdamState, adam_step, clip_gradients
from .scorer import OrderPrediction
from .seeding import make_rng
from .tensor_core import GraphTape, backward, no_grad, zero_grads

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochLog:
    """One line of the JSONL training log."""

    epoch: int
    train_loss: float
    val_tau: float
    val_pmr: float
    val_first_acc: float
    val_last_acc: float
    skipped_batches: int
    config_digest: str
    event: str = "epoch"

    def to_json(self) -> bytes:
        return orjson.dumps(asdict(self), option=orjson.OPT_SORT_KEYS) + b"\n"


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: List[EpochLog] = field(default_factory=list)


def predict_corpus(
    model: RankingModel, corpus: Corpus, loss_kind: LossKind, threads: int = 1
) -> List[OrderPrediction]:
    """Predict every paragraph; results come back in corpus order for any thread count."""
    paragraphs = corpus.paragraphs
    if threads <= 1 or len(paragraphs) < 2:
        return [model.predict(p, loss_kind) for p in paragraphs]
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="ranker-eval") as pool:
        return list(pool.map(lambda p: model.predict(p, loss_kind), paragraphs))


def evaluate(
    model: RankingModel, corpus: Corpus, loss_kind: LossKind, threads: int = 1
) -> EvalReport:
    if not len(corpus):
        raise InputError("cannot evaluate an empty corpus")
    predictions = predict_corpus(model, corpus, loss_kind, threads)
    return build_report(
        [p.predicted_order for p in predictions],
        [p.gold_order for p in corpus],
    )


def corpus_loss(model: RankingModel, corpus: Corpus, loss: LossSpec) -> float:
    """Mean per-paragraph loss over ``corpus`` without recording gradients."""
    if not len(corpus):
        raise InputError("cannot compute the loss of an empty corpus")
    with no_grad():
        total = sum(
            paragraph_loss(model.paragraph_scores(p), p.gold_order, loss).item() for p in corpus
        )
    return total / len(corpus)


def run_epoch(
    model: RankingModel,
    corpus: Corpus,
    loss: LossSpec,
    cfg: OptimizerConfig,
    state: AdamState,
    epoch: int,
) -> Tuple[float, int]:
    """One pass over ``corpus``; returns the mean training loss and skipped batch count."""
    order = make_rng(cfg.seed, "batches", epoch).permutation(len(corpus))
    trainable = model.trainable_tensors()
    skipped_before = state.skipped_steps
    total = 0.0

    for start in range(0, len(order), cfg.batch_size):
        batch = [corpus.paragraphs[i] for i in order[start : start + cfg.batch_size]]
        zero_grads(trainable.values())
        with GraphTape() as tape:
            batch_loss = model.batch_loss(batch, loss)
        backward(batch_loss, tape)
        grads, norm = clip_gradients(
            {name: t.grad for name, t in trainable.items()}, cfg.grad_clip_norm
        )
        applied = adam_step(trainable, grads, state, cfg)
        total += batch_loss.item() * len(batch)
        logger.debug(
            "epoch %d batch %d: loss %.6f, grad norm %.4f%s",
            epoch,
            start // cfg.batch_size,
            batch_loss.item(),
            norm,
            "" if applied else " (skipped)",
        )
    return total / len(corpus), state.skipped_steps - skipped_before


def _prepare_log(log_path: Path, resume: Optional[Checkpoint], header: Mapping[str, Any]) -> None:
    """Start a fresh log, or cut a resumed run's log back to the checkpoint epoch."""
    log_path.parent.mkdir(parents=True, exist_ok=True)
    header_line = orjson.dumps(header, option=orjson.OPT_SORT_KEYS) + b"\n"
    if resume is None or not log_path.exists():
        log_path.write_bytes(header_line)
        return
    kept: List[bytes] = []
    for line in log_path.read_bytes().splitlines(keepends=True):
        record = orjson.loads(line)
        if record.get("event") != "epoch" or record.get("epoch", 0) <= resume.epoch:
            kept.append(line)
    log_path.write_bytes(b"".join(kept) if kept else header_line)


def train(
    train_corpus: Corpus,
    val_corpus: Corpus,
    model: RankingModel,
    loss: LossSpec,
    cfg: OptimizerConfig,
    *,
    checkpoint_path: Optional[Union[str, Path]] = None,
    log_path: Optional[Union[str, Path]] = None,
    resume: Optional[Checkpoint] = None,
    threads: int = 1,
    config_echo: Optional[Mapping[str, Any]] = None,
) -> TrainResult:
    """Train for ``cfg.epochs`` epochs and keep the checkpoint with the best validation tau.

    When ``checkpoint_path`` is given the best checkpoint is written there on
    every strict improvement and the latest one to ``<checkpoint_path>.last``
    after every epoch.
    """
    if not len(train_corpus):
        raise InputError("training split is empty")
    if not len(val_corpus):
        raise InputError("validation split is empty")
    model.freeze_sentence_encoder = cfg.freeze_sentence_encoder

    if resume is not None:
        if resume.params.config != model.config:
            raise ConfigError("resume checkpoint was trained with a different model config")
        if resume.loss.kind is not loss.kind:
            raise ConfigError(
                f"resume checkpoint used the {resume.loss.kind.value} loss, not {loss.kind.value}"
            )
        model.params.load_state(resume.params.state_dict())
        state = copy.deepcopy(resume.adam) if resume.adam is not None else AdamState()
        start_epoch = resume.epoch + 1
        best_tau = resume.best_val_tau if resume.best_val_tau is not None else float("-inf")
        logger.info("Resuming after epoch %d (best val tau %.4f)", resume.epoch, best_tau)
    else:
        state = AdamState()
        start_epoch = 1
        best_tau = float("-inf")

    def snapshot(epoch: int, val_tau: float) -> Checkpoint:
        return Checkpoint(
            params=model.params,
            loss=loss,
            optimizer_config=cfg,
            epoch=epoch,
            val_tau=val_tau,
            best_val_tau=best_tau,
            adam=state,
        )

    digest = snapshot(0, float("nan")).digest
    log_file = Path(log_path) if log_path is not None else None
    if log_file is not None:
        header = {"event": "config", "config": dict(config_echo or {}), "config_digest": digest}
        _prepare_log(log_file, resume, header)

    best: Optional[Checkpoint] = None
    last: Optional[Checkpoint] = None
    history: List[EpochLog] = []

    for epoch in range(start_epoch, cfg.epochs + 1):
        train_loss, skipped = run_epoch(model, train_corpus, loss, cfg, state, epoch)
        report = evaluate(model, val_corpus, loss.kind, threads)
        improved = report.tau_mean > best_tau
        if improved:
            best_tau = report.tau_mean

        entry = EpochLog(
            epoch=epoch,
            train_loss=train_loss,
            val_tau=report.tau_mean,
            val_pmr=report.pmr,
            val_first_acc=report.first_acc,
            val_last_acc=report.last_acc,
            skipped_batches=skipped,
            config_digest=digest,
        )
        history.append(entry)
        if log_file is not None:
            with log_file.open("ab") as handle:
                handle.write(entry.to_json())
        logger.info(
            "Epoch %d/%d: train loss %.4f, val tau %.4f, val PMR %.3f%s",
            epoch,
            cfg.epochs,
            train_loss,
            report.tau_mean,
            report.pmr,
            " (best)" if improved else "",
        )

        current = snapshot(epoch, report.tau_mean)
        if checkpoint_path is not None:
            if improved:
                save_checkpoint(current, checkpoint_path)
            save_checkpoint(current, last_checkpoint_path(checkpoint_path))
        last = copy.deepcopy(current)
        if improved:
            best = last

    if last is None:
        # nothing to train: keep the starting weights as the result
        report = evaluate(model, val_corpus, loss.kind, threads)
        best_tau = max(best_tau, report.tau_mean)
        last = copy.deepcopy(snapshot(start_epoch - 1, report.tau_mean))
        if checkpoint_path is not None and resume is None:
            save_checkpoint(last, checkpoint_path)
            save_checkpoint(last, last_checkpoint_path(checkpoint_path))
    if best is None and resume is not None and checkpoint_path is not None:
        if Path(checkpoint_path).exists():
            best = load_checkpoint(checkpoint_path)
    if best is None:
        best = last
    return TrainResult(best=best, last=last, history=history)


def summarise(history: List[EpochLog]) -> Dict[str, Any]:
    if not history:
        return {"epochs_run": 0}
    best = max(history, key=lambda e: (e.val_tau, -e.epoch))
    return {
        "epochs_run": len(history),
        "best_epoch": best.epoch,
        "best_val_tau": best.val_tau,
        "final_train_loss": history[-1].train_loss,
        "skipped_batches": sum(e.skipped_batches for e in history),
    }
