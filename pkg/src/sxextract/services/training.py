"""
Training service for sxextract.

One deterministic epoch loop serves every trainable model: the task
extractors and the next-turn pre-training model alike. Mini-batches are
drawn from a seeded shuffle, weight noise is resampled once per batch and
the curriculum probability is advanced once per optimizer step.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from sxextract.core import CurriculumSchedule, ExperimentConfig, SatConfig, Seq2SeqConfig, config_hash
from sxextract.core.errors import NumericalError, SxError
from sxextract.core.logging import get_logger
from sxextract.extractors import (
    Example,
    Extractor,
    NextTurnModel,
    Vocab,
    adopt_encoder,
    build_extractor,
    load_pretrained_encoder,
    next_turn_examples,
)
from sxextract.extractors.span_attribute import curriculum_p
from sxextract.models import AnnotatedConversation, Conversation, Ontology
from sxextract.nn.optim import Adam
from sxextract.nn.value import Value
from sxextract.services.evaluation import default_mode, evaluate_model
from sxextract.utils import timer

__all__ = [
    "EpochRecord",
    "TrainingResult",
    "Trainable",
    "effective_schedule",
    "run_epochs",
    "train_model",
    "pretrain_encoder",
    "encoder_config",
    "write_training_log",
]

logger = get_logger("services.training")


class Trainable(Protocol):
    def example_loss(self, example: Example, p: float = 1.0) -> Value: ...

    def parameters(self) -> dict[str, Value]: ...

    def resample_noise(self) -> None: ...

    def after_update(self) -> None: ...

    def zero_grad(self) -> None: ...

    def train(self, mode: bool = True) -> Any: ...

    def inference(self) -> Any: ...


@dataclass(frozen=True)
class EpochRecord:
    """One line of the training log; epoch 0 holds the loss before any update."""

    epoch: int
    step: int
    loss: float
    p: float
    dev_f1: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class TrainingResult:
    model: Any
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float | None = None
    config_hash: str = ""


def effective_schedule(config: SatConfig, steps_per_epoch: int) -> CurriculumSchedule:
    """The configured schedule, with ``decay_steps`` tied to epochs when ``curriculum_epochs`` is set."""
    if config.curriculum_epochs > 0:
        return dataclasses.replace(config.curriculum, decay_steps=max(1, config.curriculum_epochs * steps_per_epoch))
    return config.curriculum


def _mean_loss(model: Trainable, examples: Sequence[Example]) -> float:
    with model.inference():
        total = sum(model.example_loss(example, 1.0).item() for example in examples)
    return total / len(examples)


def run_epochs(
    model: Trainable,
    examples: Sequence[Example],
    epochs: int,
    batch_size: int,
    learning_rate: float,
    l2: float = 0.0,
    seed: int = 0,
    schedule: CurriculumSchedule | None = None,
    dev_score: Callable[[], float] | None = None,
) -> TrainingResult:
    """Train in place and return the per-epoch log.

    With ``dev_score`` the parameters of the best-scoring epoch are
    restored at the end (ties keep the earlier epoch).
    """
    if not examples:
        raise SxError("no training examples", component="training")
    rng = np.random.default_rng([seed, 7])
    optimizer = Adam(model.parameters(), learning_rate, l2)
    steps_per_epoch = math.ceil(len(examples) / batch_size)
    p_at = (lambda step: curriculum_p(step, schedule)) if schedule is not None else (lambda step: 1.0)

    result = TrainingResult(model)
    initial_dev = dev_score() if dev_score is not None else None
    result.log.append(EpochRecord(0, 0, _mean_loss(model, examples), p_at(0), initial_dev))
    best_params = {name: param.data.copy() for name, param in model.parameters().items()}
    result.best_dev_f1 = initial_dev

    step = 0
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(len(examples))
        total = 0.0
        p = p_at(step)
        for b in range(steps_per_epoch):
            batch = [examples[i] for i in order[b * batch_size : (b + 1) * batch_size]]
            p = p_at(step)
            model.resample_noise()
            model.zero_grad()
            for example in batch:
                loss = model.example_loss(example, p)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(
                        f"non-finite loss at step {step} on unit {example.unit_id}", step=step, unit_id=example.unit_id
                    )
                (loss / len(batch)).backward()
                total += value
            try:
                optimizer.step()
            except NumericalError as exc:
                raise NumericalError(f"{exc.message} at step {step}", step=step, parameter=exc.parameter) from exc
            model.after_update()
            step += 1

        dev = dev_score() if dev_score is not None else None
        record = EpochRecord(epoch, step, total / len(examples), p, dev)
        result.log.append(record)
        logger.info("epoch complete", extra=record.to_dict())
        if dev is not None and (result.best_dev_f1 is None or dev > result.best_dev_f1):
            result.best_dev_f1 = dev
            result.best_epoch = epoch
            best_params = {name: param.data.copy() for name, param in model.parameters().items()}

    if dev_score is not None:
        for name, param in model.parameters().items():
            param.data = best_params[name]
    else:
        result.best_epoch = epochs
    model.train(False)
    return result


def _section(model_type: str, config: ExperimentConfig) -> SatConfig | Seq2SeqConfig:
    return config.seq2seq if model_type == "seq2seq" else config.sat


def _dev_scorer(model: Extractor, dev: Sequence[AnnotatedConversation], seed: int) -> Callable[[], float]:
    mode = default_mode(dev)

    def score() -> float:
        return evaluate_model(model, dev, (mode,), seed)[mode].cell("unweighted", "sx_status").f1

    return score


@timer
def train_model(
    model_type: str,
    train: Sequence[AnnotatedConversation],
    ontology: Ontology,
    config: ExperimentConfig,
    seed: int = 0,
    dev: Sequence[AnnotatedConversation] | None = None,
    pretrained_encoder: Path | None = None,
) -> TrainingResult:
    """Build, optionally warm-start, and train one extractor.

    The dev split picks the best epoch by unweighted Sx+Status F1, in voted
    mode when it has three annotators per conversation.
    """
    if not train:
        raise SxError("the training split is empty", component="training")
    section = _section(model_type, config)
    if pretrained_encoder is not None:
        arrays, _, vocab = load_pretrained_encoder(pretrained_encoder)
    else:
        vocab = Vocab.build(item.conversation for item in train)
    model: Extractor = build_extractor(model_type, config, vocab, ontology, seed)
    if pretrained_encoder is not None:
        adopt_encoder(model, arrays)
    examples = model.training_examples(train)

    schedule = None
    if model.uses_curriculum:
        assert isinstance(section, SatConfig)
        schedule = effective_schedule(section, math.ceil(len(examples) / section.batch_size))

    dev_score = _dev_scorer(model, dev, seed) if dev else None

    logger.info(
        "training started",
        extra={
            "model": model_type,
            "n_examples": len(examples),
            "vocab": len(vocab),
            "pretrained": pretrained_encoder is not None,
            "config_hash": config_hash(section),
        },
    )
    result = run_epochs(
        model,
        examples,
        section.epochs,
        section.batch_size,
        section.learning_rate,
        section.l2,
        seed,
        schedule,
        dev_score,
    )
    result.config_hash = config_hash(section)
    logger.info(
        "training finished",
        extra={"model": model_type, "best_epoch": result.best_epoch, "dev_f1": result.best_dev_f1},
    )
    return result


def encoder_config(model_type: str, config: ExperimentConfig) -> Seq2SeqConfig:
    """Pre-training config whose encoder dimensions match ``model_type``'s encoder."""
    if model_type == "seq2seq":
        return config.seq2seq
    sat = config.sat
    return dataclasses.replace(
        config.seq2seq,
        word_emb_dim=sat.word_emb_dim,
        lstm_hidden=sat.lstm_hidden,
        layers=sat.enc_layers,
        dropout=sat.dropout,
        dtype=sat.dtype,
    )


@timer
def pretrain_encoder(
    conversations: Sequence[Conversation],
    config: ExperimentConfig,
    seed: int = 0,
    target_model: str = "seq2seq",
) -> TrainingResult:
    """Next-turn pre-training on unlabeled conversations.

    The snippet length is ``window_k - 1`` turns; the encoder matches the
    dimensions of ``target_model``.
    """
    section = encoder_config(target_model, config)
    vocab = Vocab.build(conversations)
    model = NextTurnModel(section, vocab, seed)
    examples = next_turn_examples(conversations, section.window_k - 1, vocab)
    if not examples:
        raise SxError("no conversation is long enough for next-turn pairs", component="training")
    logger.info("pre-training started", extra={"n_examples": len(examples), "vocab": len(vocab)})
    result = run_epochs(model, examples, section.epochs, section.batch_size, section.learning_rate, section.l2, seed)
    result.config_hash = config_hash(section)
    return result


def write_training_log(path: Path, log: Sequence[EpochRecord]) -> None:
    """JSON lines without timestamps, so equal runs give equal files."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for record in log:
            handle.write(json.dumps(record.to_dict(), sort_keys=True))
            handle.write("\n")
