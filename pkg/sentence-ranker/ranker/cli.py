"""
Command-line interface: synth, train, eval, discriminate, gradcheck, export-embeddings.

Settings resolve in three layers: built-in defaults, then a flat
``key=value`` file given with ``--config``, then explicit flags. Machine
readable JSON goes to stdout (and ``--output`` when given); progress and
summaries go to the log on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import orjson

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint
from .config import ModelConfig, RunConfig, config_digest, load_config_file
from .constants import (
    EXIT_CONFIG_ERROR,
    EXIT_INPUT_ERROR,
    EXIT_IO_ERROR,
    EXIT_OK,
    EXIT_UNEXPECTED,
    EXIT_VALIDATION_FAILURE,
    GRADCHECK_ABS_FLOOR,
)
from .data import (
    Corpus,
    Paragraph,
    Vocabulary,
    load_corpus,
    load_vocabulary,
    synth_generate_splits,
    write_corpus,
    write_vocabulary,
)
from .discrimination import build_pairs, discriminate_all
from .encoders import encode_sentences
from .errors import ConfigError, GradientCheckError, InputError, RankerError
from .losses import LossKind, LossSpec, paragraph_loss
from .metrics import build_report, kendall_tau
from .model import SENTENCE_ENCODER_PREFIX, RankingModel, init_model
from .seeding import derive_seed, make_rng
from .tensor_core import Tensor, finite_diff_check, no_grad
from .training import predict_corpus, summarise, train

logger = logging.getLogger(__name__)

# tiny architecture used by ``gradcheck``: two heads of width 8, one block per encoder
GRADCHECK_MODEL = ModelConfig(
    mode="tokens",
    vocab_size=12,
    d_model=16,
    heads=2,
    sentence_blocks=1,
    paragraph_blocks=1,
    decoder_hidden=8,
    max_len=8,
)
GRADCHECK_SENTENCES = 3
CORRUPTION_FACTOR = 1.5


def _optional_float(value: str) -> Optional[float]:
    return None if value.strip().lower() in ("none", "off", "") else float(value)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Flat key=value file supplying defaults.")
    parser.add_argument("--seed", type=int, help="Root seed for every random component.")
    parser.add_argument("--threads", type=int, help="Worker threads for inference (default 1).")
    parser.add_argument("--output", help="Also write the JSON report to this path.")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--mode", choices=["tokens", "embeddings"])
    group.add_argument("--vocab-size", type=int)
    group.add_argument("--d-model", type=int)
    group.add_argument("--heads", type=int)
    group.add_argument("--sentence-blocks", type=int)
    group.add_argument("--paragraph-blocks", type=int)
    group.add_argument("--decoder-hidden", type=int)
    group.add_argument("--decoder-layers", type=int)
    group.add_argument("--max-len", type=int)


def _add_optimizer_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("optimizer")
    group.add_argument("--loss", choices=[k.value for k in LossKind])
    group.add_argument("--margin", type=float, help="Pairwise hinge margin.")
    group.add_argument("--lr-encoder", type=float)
    group.add_argument("--lr-decoder", type=float)
    group.add_argument("--beta1", type=float)
    group.add_argument("--beta2", type=float)
    group.add_argument("--epsilon", type=float)
    group.add_argument("--batch-size", type=int)
    group.add_argument("--epochs", type=int)
    group.add_argument("--grad-clip-norm", type=_optional_float, help="Global norm, or 'none'.")
    group.add_argument("--freeze-sentence-encoder", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sentence-ranker",
        description="Order shuffled sentences by scoring them in parallel and sorting.",
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("--version", action="version", version=f"sentence-ranker {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic corpus.", argument_default=argparse.SUPPRESS)
    _add_common(synth)
    synth.add_argument("--out-dir", help="Directory for train/val/test.jsonl and vocab.txt.")
    synth.add_argument("--n-train", type=int)
    synth.add_argument("--n-val", type=int)
    synth.add_argument("--n-test", type=int)
    synth.add_argument("--min-sentences", type=int)
    synth.add_argument("--max-sentences", type=int)
    synth.add_argument("--vocab-size", type=int)
    synth.add_argument("--signal", type=float, help="Probability a sentence carries its key token.")
    synth.add_argument("--min-filler", type=int)
    synth.add_argument("--max-filler", type=int)

    train_p = sub.add_parser("train", help="Train a model.", argument_default=argparse.SUPPRESS)
    _add_common(train_p)
    train_p.add_argument("--train", help="Training corpus (JSONL).")
    train_p.add_argument("--val", help="Validation corpus (JSONL).")
    train_p.add_argument("--vocab", help="Vocabulary file.")
    train_p.add_argument("--checkpoint", help="Where to write the best checkpoint.")
    train_p.add_argument("--log", help="Training log (JSONL); default <checkpoint>.log.jsonl.")
    train_p.add_argument("--resume", help="Continue from this (last-epoch) checkpoint.")
    train_p.add_argument(
        "--init-sentence-encoder", help="Warm-start the sentence encoder from this checkpoint."
    )
    _add_model_flags(train_p)
    _add_optimizer_flags(train_p)

    eval_p = sub.add_parser("eval", help="Score a corpus with a checkpoint.", argument_default=argparse.SUPPRESS)
    _add_common(eval_p)
    eval_p.add_argument("--checkpoint")
    eval_p.add_argument("--corpus")
    eval_p.add_argument("--vocab")
    eval_p.add_argument("--dump", help="Per-paragraph predictions (JSONL).")

    disc = sub.add_parser(
        "discriminate", help="Original-vs-permuted discrimination.", argument_default=argparse.SUPPRESS
    )
    _add_common(disc)
    disc.add_argument("--checkpoint")
    disc.add_argument("--corpus")
    disc.add_argument("--vocab")
    disc.add_argument("--pairs-per-paragraph", type=int)

    grad = sub.add_parser(
        "gradcheck", help="Verify gradients against finite differences.", argument_default=argparse.SUPPRESS
    )
    _add_common(grad)
    grad.add_argument("--fd-step", type=float)
    grad.add_argument("--threshold", type=float)
    grad.add_argument("--max-coords", type=int)
    grad.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    export = sub.add_parser(
        "export-embeddings",
        help="Write an embedding-mode corpus from a checkpoint's sentence encoder.",
        argument_default=argparse.SUPPRESS,
    )
    _add_common(export)
    export.add_argument("--checkpoint")
    export.add_argument("--corpus")
    export.add_argument("--vocab")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional config file and explicit flags into a RunConfig."""
    values: Dict[str, Any] = {}
    flags = dict(vars(args))
    command = flags.pop("command")
    flags.pop("corrupt_gradient", None)
    config_path = flags.pop("config", None)
    if config_path is not None:
        values.update(load_config_file(config_path))
    values.update(flags)
    return RunConfig.from_flat(command, values)


def _emit(payload: Mapping[str, Any], output: Optional[Path]) -> None:
    data = orjson.dumps(
        payload, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY
    )
    if output is not None:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_bytes(data + b"\n")
    sys.stdout.write(data.decode("utf-8") + "\n")
    sys.stdout.flush()


def _echo(cfg: RunConfig) -> Dict[str, Any]:
    return {"config": cfg.to_dict(), "config_digest": config_digest(cfg)}


def _load_vocab(cfg: RunConfig) -> Optional[Vocabulary]:
    path = cfg.path("vocab")
    return load_vocabulary(path) if path is not None else None


def _check_corpus_fits(corpus: Corpus, model_config: ModelConfig, what: str) -> None:
    if corpus.mode is not None and corpus.mode != model_config.mode:
        raise ConfigError(
            f"{what} holds {corpus.mode} paragraphs but the model expects {model_config.mode}"
        )
    dim = corpus.embedding_dim
    if dim is not None and dim != model_config.d_model:
        raise ConfigError(
            f"{what} embeddings have dimension {dim} but the model uses d_model={model_config.d_model}"
        )


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    out_dir = cfg.require_path("out_dir")
    splits = synth_generate_splits(cfg.synth)
    out_dir.mkdir(parents=True, exist_ok=True)

    files: Dict[str, str] = {}
    for split, corpus in splits.items():
        target = out_dir / f"{split}.jsonl"
        write_corpus(corpus, target)
        files[split] = target.name
    vocabulary = splits["train"].vocabulary
    assert vocabulary is not None
    write_vocabulary(vocabulary, out_dir / "vocab.txt")
    files["vocab"] = "vocab.txt"

    manifest = {
        **_echo(cfg),
        "files": files,
        "counts": {split: len(corpus) for split, corpus in splits.items()},
        "vocab_size": len(vocabulary),
    }
    (out_dir / "manifest.json").write_bytes(
        orjson.dumps(manifest, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2) + b"\n"
    )
    logger.info(
        "✅ Wrote synthetic corpus to %s (%s)",
        out_dir,
        ", ".join(f"{k}={v}" for k, v in manifest["counts"].items()),
    )
    _emit(manifest, cfg.path("output"))
    return EXIT_OK


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    vocabulary = _load_vocab(cfg)
    if vocabulary is not None and len(vocabulary) > cfg.model.vocab_size:
        raise ConfigError(
            f"vocabulary has {len(vocabulary)} tokens but --vocab-size is {cfg.model.vocab_size}"
        )
    train_corpus = load_corpus(cfg.require_path("train"), split="train", vocabulary=vocabulary)
    val_corpus = load_corpus(cfg.require_path("val"), split="val", vocabulary=vocabulary)
    _check_corpus_fits(train_corpus, cfg.model, "training corpus")
    _check_corpus_fits(val_corpus, cfg.model, "validation corpus")

    params = init_model(cfg.model, cfg.seed)
    warm_start = cfg.path("init_sentence_encoder")
    if warm_start is not None:
        if cfg.model.mode != "tokens":
            raise ConfigError("--init-sentence-encoder needs a token-mode model")
        donor = load_checkpoint(warm_start)
        params.load_state(donor.params.state_dict(), prefix=SENTENCE_ENCODER_PREFIX)
        logger.info("Sentence encoder initialised from %s", warm_start)

    resume: Optional[Checkpoint] = None
    resume_path = cfg.path("resume")
    if resume_path is not None:
        resume = load_checkpoint(resume_path)

    checkpoint_path = cfg.require_path("checkpoint")
    log_path = cfg.path("log") or checkpoint_path.with_name(checkpoint_path.name + ".log.jsonl")
    model = RankingModel(params, freeze_sentence_encoder=cfg.optimizer.freeze_sentence_encoder)
    logger.info(
        "🚀 Training %s loss on %d paragraphs (%d validation), %d epochs",
        cfg.loss.kind.value,
        len(train_corpus),
        len(val_corpus),
        cfg.optimizer.epochs,
    )
    result = train(
        train_corpus,
        val_corpus,
        model,
        cfg.loss,
        cfg.optimizer,
        checkpoint_path=checkpoint_path,
        log_path=log_path,
        resume=resume,
        threads=cfg.threads,
        config_echo=cfg.to_dict(),
    )

    payload = {
        **_echo(cfg),
        "checkpoint": str(checkpoint_path),
        "log": str(log_path),
        "best_epoch": result.best.epoch,
        "best_val_tau": result.best.val_tau,
        "summary": summarise(result.history),
    }
    logger.info(
        "🎯 Best validation tau %.4f at epoch %d; checkpoint %s",
        result.best.val_tau if result.best.val_tau is not None else float("nan"),
        result.best.epoch,
        checkpoint_path,
    )
    _emit(payload, cfg.path("output"))
    return EXIT_OK


def _load_for_inference(cfg: RunConfig) -> Tuple[Checkpoint, Corpus]:
    ckpt = load_checkpoint(cfg.require_path("checkpoint"))
    corpus = load_corpus(cfg.require_path("corpus"), vocabulary=_load_vocab(cfg))
    if not len(corpus):
        raise InputError(f"{cfg.require_path('corpus')} has no usable paragraphs")
    _check_corpus_fits(corpus, ckpt.params.config, "corpus")
    return ckpt, corpus


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    ckpt, corpus = _load_for_inference(cfg)
    model = RankingModel(ckpt.params)
    kind = ckpt.loss.kind
    predictions = predict_corpus(model, corpus, kind, cfg.threads)
    golds = [p.gold_order for p in corpus]
    report = build_report([p.predicted_order for p in predictions], golds)

    dump = cfg.path("dump")
    if dump is not None:
        dump.parent.mkdir(parents=True, exist_ok=True)
        with dump.open("wb") as handle:
            for paragraph, prediction in zip(corpus, predictions):
                record = {
                    "id": paragraph.id,
                    "scores": list(prediction.scores),
                    "predicted_order": list(prediction.predicted_order),
                    "gold_order": list(paragraph.gold_order),
                    "tau": kendall_tau(prediction.predicted_order, paragraph.gold_order),
                }
                handle.write(orjson.dumps(record, option=orjson.OPT_SORT_KEYS) + b"\n")
        logger.info("Wrote per-paragraph predictions to %s", dump)

    payload = {
        **_echo(cfg),
        "report": report.to_dict(),
        "split": corpus.split,
        "loss": kind.value,
        "checkpoint_epoch": ckpt.epoch,
        "checkpoint_config_digest": ckpt.digest,
    }
    logger.info(
        "📊 tau %.4f, PMR %.4f, first %.4f, last %.4f over %d paragraphs",
        report.tau_mean,
        report.pmr,
        report.first_acc,
        report.last_acc,
        report.n_paragraphs,
    )
    _emit(payload, cfg.path("output"))
    return EXIT_OK


def cmd_discriminate(cfg: RunConfig, args: argparse.Namespace) -> int:
    ckpt, corpus = _load_for_inference(cfg)
    model = RankingModel(ckpt.params)
    pairs = build_pairs(corpus, cfg.pairs_per_paragraph, cfg.seed)
    report, _ = discriminate_all(pairs, model, ckpt.loss.kind, cfg.threads)
    payload = {
        **_echo(cfg),
        **report.to_dict(),
        "checkpoint_config_digest": ckpt.digest,
    }
    _emit(payload, cfg.path("output"))
    return EXIT_OK


def gradcheck_paragraph(seed: int, config: ModelConfig = GRADCHECK_MODEL) -> Paragraph:
    """A random token paragraph sized for the gradcheck model."""
    rng = make_rng(seed, "gradcheck", "paragraph")
    sentences = tuple(
        tuple(int(t) for t in rng.integers(2, config.vocab_size, size=int(rng.integers(2, 5))))
        for _ in range(GRADCHECK_SENTENCES)
    )
    gold = tuple(int(v) + 1 for v in rng.permutation(GRADCHECK_SENTENCES))
    return Paragraph(id="gradcheck", gold_order=gold, sentences=sentences)


def run_gradcheck(
    seed: int,
    *,
    step: float,
    max_coords: int,
    margin: float,
    corrupt: bool = False,
) -> Dict[str, Dict[str, Any]]:
    """Full-model gradient check for every loss kind, each on a freshly initialised model."""
    paragraph = gradcheck_paragraph(seed)

    def corrupt_hook(tensors: Mapping[str, Tensor]) -> None:
        for tensor in tensors.values():
            tensor.grad = tensor.grad * CORRUPTION_FACTOR

    results: Dict[str, Dict[str, Any]] = {}
    for kind in LossKind:
        model = RankingModel(init_model(GRADCHECK_MODEL, seed))
        spec = LossSpec(kind=kind, margin=margin)

        def loss_fn(_: Mapping[str, Tensor]) -> Tensor:
            return paragraph_loss(model.paragraph_scores(paragraph), paragraph.gold_order, spec)

        report = finite_diff_check(
            loss_fn,
            model.params.named_tensors(),
            step,
            max_coords=max_coords,
            seed=derive_seed(seed, "gradcheck", "coords", kind.value),
            abs_floor=GRADCHECK_ABS_FLOOR,
            grad_hook=corrupt_hook if corrupt else None,
        )
        results[kind.value] = report.to_dict()
    return results


def cmd_gradcheck(cfg: RunConfig, args: argparse.Namespace) -> int:
    corrupt = bool(getattr(args, "corrupt_gradient", False))
    results = run_gradcheck(
        cfg.seed,
        step=cfg.fd_step,
        max_coords=cfg.max_coords,
        margin=cfg.loss.margin,
        corrupt=corrupt,
    )
    failed: List[str] = []
    for kind, result in results.items():
        passed = result["failure"] is None and result["max_rel_error"] <= cfg.threshold
        result["passed"] = passed
        if not passed:
            failed.append(kind)
        logger.info(
            "%s %s: max relative error %.3e over %d coordinates",
            "✅" if passed else "❌",
            kind,
            result["max_rel_error"],
            result["coords_checked"],
        )
    _emit({**_echo(cfg), "threshold": cfg.threshold, "results": results}, cfg.path("output"))
    if failed:
        raise GradientCheckError(
            f"gradient check above {cfg.threshold:g} for: {', '.join(failed)}"
        )
    return EXIT_OK


def cmd_export_embeddings(cfg: RunConfig, args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(cfg.require_path("checkpoint"))
    encoder = ckpt.params.sentence_encoder
    if encoder is None:
        raise ConfigError("checkpoint has no sentence encoder (embedding-mode model)")
    corpus = load_corpus(cfg.require_path("corpus"), vocabulary=_load_vocab(cfg))
    _check_corpus_fits(corpus, ckpt.params.config, "corpus")
    output = cfg.require_path("output")

    exported: List[Paragraph] = []
    with no_grad():
        for paragraph in corpus:
            vectors = encode_sentences(list(paragraph.sentences or ()), encoder)
            exported.append(
                Paragraph(
                    id=paragraph.id,
                    gold_order=paragraph.gold_order,
                    embeddings=np.array(vectors.values),
                    shuffle_seed=paragraph.shuffle_seed,
                )
            )
    write_corpus(Corpus(paragraphs=tuple(exported), split=corpus.split), output)
    payload = {
        **_echo(cfg),
        "paragraphs": len(exported),
        "dimension": ckpt.params.config.d_model,
        "checkpoint_config_digest": ckpt.digest,
    }
    logger.info("✅ Exported %d paragraphs to %s", len(exported), output)
    # --output names the exported corpus here, so the report only goes to stdout
    _emit(payload, None)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "discriminate": cmd_discriminate,
    "gradcheck": cmd_gradcheck,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        logger.error("⚠️  Configuration error: %s", exc)
        return EXIT_CONFIG_ERROR
    except GradientCheckError as exc:
        logger.error("❌ %s", exc)
        return EXIT_VALIDATION_FAILURE
    except InputError as exc:
        logger.error("⚠️  Input error: %s", exc)
        return EXIT_INPUT_ERROR
    except OSError as exc:
        logger.error("💥 I/O error: %s", exc)
        return EXIT_IO_ERROR
    except RankerError as exc:
        logger.error("💥 %s", exc, exc_info=True)
        return EXIT_UNEXPECTED
