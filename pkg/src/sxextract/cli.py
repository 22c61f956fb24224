"""
Command-line interface for sxextract.

Following SRP, this module handles only CLI concerns: argument parsing,
output directories and exit codes. Business logic lives in the services.

Exit codes: 0 success, 1 usage/config/format error, 2 verification
failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, NoReturn

from dotenv import find_dotenv, load_dotenv

from sxextract.core import (
    MODEL_TYPES,
    PRESETS,
    ExperimentConfig,
    RunConfig,
    config_hash,
    config_to_dict,
    get_config,
    load_config,
)
from sxextract.core.errors import NumericalError, SxError, VerificationError
from sxextract.core.logging import get_logger, set_run_id, setup_logging
from sxextract.extractors import Seq2SeqModel, load_extractor
from sxextract.models import MODES, AnnotatedConversation, Conversation, MetricsReport, Mode
from sxextract.services.agreement import corpus_kappa, evaluate_annotators
from sxextract.services.corpus import asr_corpus, build_ontology, generate_corpus
from sxextract.services.corpus_io import read_corpus, read_ontology, write_corpus, write_ontology
from sxextract.services.evaluation import (
    default_mode,
    evaluate_asr,
    evaluate_model,
    export_attention,
    missed_symptoms,
    paired_comparison,
    predict_corpus,
)
from sxextract.services.reporting import (
    agreement_line,
    comparison_table,
    false_negative_table,
    flat_records,
    metrics_table,
    write_flat_records,
)
from sxextract.services.training import pretrain_encoder, train_model, write_training_log
from sxextract.services.verification import SUITES, run_verification
from sxextract.utils import atomic_output_dir, stable_hash

logger = get_logger("cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """Reports usage errors as exit code 1 instead of argparse's 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise SxError(message, component="cli")


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_overrides(items: Sequence[str]) -> dict[str, dict[str, Any]]:
    """``section.key=value`` (or ``sat.curriculum.key=value``) flags as nested tables."""
    overrides: dict[str, dict[str, Any]] = {}
    for item in items:
        key, sep, text = item.partition("=")
        parts = key.strip().split(".")
        if not sep or len(parts) < 2 or not all(parts):
            raise SxError(f"override {item!r} must look like section.key=value", component="cli")
        table: dict[str, Any] = overrides.setdefault(parts[0], {})
        for part in parts[1:-1]:
            table = table.setdefault(part, {})
        table[parts[-1]] = _parse_value(text.strip())
    return overrides


def _effective_config(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(args.config, args.preset, parse_overrides(args.set or []))


def _echo_config(directory: Path, config: ExperimentConfig, seed: int, **extra: Any) -> str:
    digest = config_hash(config)
    payload = {"config": config_to_dict(config), "config_hash": digest, "seed": seed, **extra}
    (directory / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return digest


def run_config(args: argparse.Namespace) -> RunConfig:
    """The invocation as data; paths are kept as given."""
    corpora: list[Path] = []
    for name in ("train", "dev", "corpus"):
        value = getattr(args, name, None)
        if value is not None:
            corpora.extend(value if isinstance(value, list) else [value])
    return RunConfig(
        command=args.command,
        seed=args.seed,
        output_dir=getattr(args, "out", None),
        model_type=getattr(args, "model_type", None),
        config_path=getattr(args, "config", None),
        corpus_paths=tuple(corpora),
        preset=getattr(args, "preset", "desk"),
    )


def _start_run(args: argparse.Namespace, config: ExperimentConfig | None = None) -> RunConfig:
    run = run_config(args)
    digest = config_hash(config) if config is not None else None
    set_run_id(stable_hash({"run": config_to_dict(run), "config": digest}))
    logger.info("run started", extra={"command": run.command, "seed": run.seed, "preset": run.preset})
    return run


def cmd_generate(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    _start_run(args, config)
    ontology = build_ontology(config.generator)
    sizes = config.splits
    splits = {
        "train": generate_corpus(config.generator, args.seed, ontology, 1, sizes.train, "train", stream=0),
        "dev": generate_corpus(config.generator, args.seed, ontology, 3, sizes.dev, "dev", stream=1),
        "test": generate_corpus(config.generator, args.seed, ontology, 3, sizes.test, "test", stream=2),
    }
    with atomic_output_dir(args.out) as staging:
        write_ontology(staging / "ontology.tsv", ontology)
        for name, corpus in splits.items():
            write_corpus(staging / f"{name}.jsonl", corpus)
        summary: dict[str, Any] = {name: len(corpus) for name, corpus in splits.items()}
        agreement = [corpus_kappa(splits[name], ontology) for name in ("dev", "test") if splits[name]]
        if agreement:
            summary["kappa"] = {name: round(a.kappa, 6) for name, a in zip(("dev", "test"), agreement)}
        _echo_config(staging, config, args.seed, splits=summary)
    print(f"✅ Generated {sizes.train}/{sizes.dev}/{sizes.test} conversations in {args.out}")
    for a in agreement:
        print(agreement_line(a))
    return EXIT_OK


def _with_asr(corpus: list[AnnotatedConversation], config: ExperimentConfig, seed: int) -> list[AnnotatedConversation]:
    noisy, _, transfer = asr_corpus(corpus, config.asr, seed)
    print(f"Simulated ASR training transcripts: {transfer.discarded} labels discarded ({transfer.discard_rate:.1%})")
    renamed = []
    for item in noisy:
        conversation = Conversation(f"{item.id}#asr", item.conversation.turns)
        renamed.append(dataclasses.replace(item, conversation=conversation))
    return renamed


def _training_corpus(args: argparse.Namespace, config: ExperimentConfig, ontology: Any) -> list[AnnotatedConversation]:
    manual = read_corpus(args.train, ontology)
    if args.train_transcripts == "manual":
        return manual
    noisy = _with_asr(manual, config, args.seed)
    return noisy if args.train_transcripts == "asr" else [*manual, *noisy]


def cmd_train(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    _start_run(args, config)
    ontology = read_ontology(args.ontology)
    train = _training_corpus(args, config, ontology)
    dev = read_corpus(args.dev, ontology) if args.dev else None
    result = train_model(args.model_type, train, ontology, config, args.seed, dev, args.pretrained_encoder)
    with atomic_output_dir(args.out) as staging:
        result.model.save(
            staging / "model.npz",
            best_epoch=result.best_epoch,
            train_transcripts=args.train_transcripts,
            pretrained=args.pretrained_encoder is not None,
        )
        write_training_log(staging / "training_log.jsonl", result.log)
        _echo_config(
            staging,
            config,
            args.seed,
            model_type=args.model_type,
            best_epoch=result.best_epoch,
            best_dev_f1=result.best_dev_f1,
            train_transcripts=args.train_transcripts,
        )
    dev_text = "n/a" if result.best_dev_f1 is None else f"{result.best_dev_f1:.4f}"
    print(f"✅ Trained {args.model_type}: best epoch {result.best_epoch}, dev F1 {dev_text} -> {args.out}")
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    _start_run(args, config)
    conversations = [item.conversation for path in args.corpus for item in read_corpus(path)]
    result = pretrain_encoder(conversations, config, args.seed, args.target_model)
    with atomic_output_dir(args.out) as staging:
        result.model.encoder_checkpoint(staging / "encoder.npz", target_model=args.target_model)
        write_training_log(staging / "pretrain_log.jsonl", result.log)
        _echo_config(staging, config, args.seed, target_model=args.target_model)
    print(f"✅ Pre-trained encoder for {args.target_model} -> {args.out / 'encoder.npz'}")
    return EXIT_OK


def _modes(args: argparse.Namespace, corpus: Sequence[AnnotatedConversation]) -> list[Mode]:
    if args.modes:
        return list(args.modes)
    return list(MODES) if default_mode(corpus) == "voted" else ["single"]


def _human_rows(corpus: Sequence[AnnotatedConversation]) -> list[tuple[str, MetricsReport]]:
    if default_mode(corpus) != "voted":
        return []
    return list(evaluate_annotators(corpus).items())


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    _start_run(args, config)
    model = load_extractor(args.checkpoint)
    corpus = read_corpus(args.corpus, model.ontology)
    if not corpus:
        raise SxError(f"{args.corpus} holds no conversations", component="cli")
    modes = _modes(args, corpus)
    label = model.model_type

    preds = predict_corpus(model, corpus)
    reports = evaluate_model(model, corpus, modes, args.seed, args.project_body_system, preds=preds)
    rows: list[tuple[str, MetricsReport]] = [(label, reports[m]) for m in modes]
    if not args.project_body_system and model.key_space == "symptom":
        rows.extend((f"human:{name}", r) for name, r in _human_rows(corpus))

    comparisons = {}
    if args.compare:
        other = load_extractor(args.compare)
        other_reports = evaluate_model(other, corpus, modes, args.seed, args.project_body_system)
        rows.extend((f"{other.model_type} (compare)", other_reports[m]) for m in modes)
        for m in modes:
            comparisons[(f"{label}/{m}", f"{other.model_type}/{m}")] = paired_comparison(reports[m], other_reports[m])

    asr_note = None
    if args.asr_sim:
        asr_reports, asr, transfer = evaluate_asr(model, corpus, config.asr, args.seed, modes, args.project_body_system)
        rows.extend((f"{label} (asr)", asr_reports[m]) for m in modes)
        asr_note = (
            f"simulated ASR: WER {asr.wer:.3f}, "
            f"{transfer.discarded} labels discarded ({transfer.discard_rate:.1%})"
        )

    reference_mode = default_mode(corpus)
    missed = missed_symptoms(model, corpus, preds, args.seed, args.project_body_system)

    agreement = corpus_kappa(corpus, model.ontology) if reference_mode == "voted" else None
    provenance = {"seed": args.seed, "config_hash": config_hash(config), "checkpoint": str(args.checkpoint)}

    with atomic_output_dir(args.out) as staging:
        sections = [
            f"# Evaluation of {label} on {args.corpus}",
            "",
            f"seed: {args.seed}  config hash: {provenance['config_hash']}",
            "",
            metrics_table(rows),
        ]
        if asr_note:
            sections += ["", asr_note]
        if agreement is not None:
            sections += ["", agreement_line(agreement)]
        sections += ["", f"## False negatives ({reference_mode} reference)", "", false_negative_table(missed)]
        if comparisons:
            sections += ["", "## Paired comparison (Mann-Whitney, unweighted Sx + Status F1)", ""]
            sections.append(comparison_table(comparisons))
        report_text = "\n".join(sections) + "\n"
        (staging / "report.md").write_text(report_text, encoding="utf-8")
        write_flat_records(staging / "metrics.jsonl", flat_records(rows, provenance))
        if args.attention:
            if not isinstance(model, Seq2SeqModel):
                raise SxError("--attention needs a seq2seq checkpoint", component="cli")
            export_attention(model, corpus, staging / "attention.jsonl")
        _echo_config(staging, config, args.seed, checkpoint=str(args.checkpoint), modes=modes)
    print(report_text)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    _start_run(args)
    report = run_verification(args.seed, args.quick, args.suite)
    for suite in report.suites:
        mark = "✓" if suite.passed else "✗"
        print(f"{mark} {suite.name}: {suite.checks} checks, {len(suite.failures)} failures ({suite.seconds:.1f}s)")
        for failure in suite.failures[:5]:
            print(f"    {failure}")
    if args.out:
        with atomic_output_dir(args.out) as staging:
            payload = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
            (staging / "verification.json").write_text(payload, encoding="utf-8")
    if not report.passed:
        failed = [s.name for s in report.suites if not s.passed]
        raise VerificationError(f"verification failed: {', '.join(failed)}", failures=failed)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="TOML config file")
    parser.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="base preset (default: desk)")
    parser.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value (repeatable)"
    )
    parser.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sxextract",
        description="Symptom and status extraction from clinical conversations",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  sxextract generate --out data/desk
  sxextract train --model-type sat --train data/desk/train.jsonl --dev data/desk/dev.jsonl \\
      --ontology data/desk/ontology.tsv --out runs/sat
  sxextract evaluate --checkpoint runs/sat/model.npz --corpus data/desk/test.jsonl --out runs/sat-test
  sxextract verify --quick
        """,
    )
    parser.add_argument("--log-level", default=None, help="log level (default: SXEXTRACT_LOG_LEVEL or INFO)")
    parser.add_argument("--log-format", choices=["json", "text"], default=None, help="log format")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    generate = commands.add_parser("generate", help="emit synthetic train/dev/test splits")
    _add_common(generate)
    generate.add_argument("--out", type=Path, required=True, help="output directory")
    generate.set_defaults(handler=cmd_generate)

    train = commands.add_parser("train", help="train and checkpoint an extractor")
    _add_common(train)
    train.add_argument("--model-type", choices=MODEL_TYPES, required=True)
    train.add_argument("--train", type=Path, required=True, help="training corpus (JSON lines)")
    train.add_argument("--dev", type=Path, default=None, help="development corpus for best-epoch selection")
    train.add_argument("--ontology", type=Path, required=True, help="ontology TSV")
    train.add_argument("--pretrained-encoder", type=Path, default=None, help="encoder checkpoint to start from")
    train.add_argument(
        "--train-transcripts",
        choices=["manual", "asr", "combined"],
        default="manual",
        help="train on manual, simulated-ASR, or both transcripts",
    )
    train.add_argument("--out", type=Path, required=True, help="output directory")
    train.set_defaults(handler=cmd_train)

    pretrain = commands.add_parser("pretrain", help="next-turn encoder pre-training")
    _add_common(pretrain)
    pretrain.add_argument("--corpus", type=Path, nargs="+", required=True, help="unlabeled corpora")
    pretrain.add_argument("--target-model", choices=MODEL_TYPES, default="seq2seq", help="encoder dimensions to match")
    pretrain.add_argument("--out", type=Path, required=True, help="output directory")
    pretrain.set_defaults(handler=cmd_pretrain)

    evaluate = commands.add_parser("evaluate", help="score a checkpoint on a corpus")
    _add_common(evaluate)
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--corpus", type=Path, required=True)
    evaluate.add_argument("--modes", nargs="+", choices=MODES, default=None, help="reference modes")
    evaluate.add_argument("--project-body-system", action="store_true", help="score at body-system level")
    evaluate.add_argument("--asr-sim", action="store_true", help="also score on simulated ASR transcripts")
    evaluate.add_argument("--compare", type=Path, default=None, help="second checkpoint for a paired test")
    evaluate.add_argument("--attention", action="store_true", help="export seq2seq attention matrices")
    evaluate.add_argument("--out", type=Path, required=True, help="output directory")
    evaluate.set_defaults(handler=cmd_evaluate)

    verify = commands.add_parser("verify", help="run the oracle suites")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--quick", action="store_true", help="fewer draws and seeds")
    verify.add_argument("--suite", action="append", choices=sorted(SUITES), help="run only these suites")
    verify.add_argument("--out", type=Path, default=None, help="write verification.json here")
    verify.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Main CLI entry point."""
    load_dotenv(find_dotenv(usecwd=True))
    try:
        args = build_parser().parse_args(argv)
        level = args.log_level or get_config("LOG_LEVEL")
        fmt = args.log_format or get_config("LOG_FORMAT")
        try:
            setup_logging(level, fmt)
        except ValueError as exc:
            raise SxError(f"invalid log level {level!r}", component="cli") from exc
        logger.debug("command started", extra={"command": args.command})
        handler: Callable[[argparse.Namespace], int] = args.handler
        return handler(args)
    except KeyboardInterrupt:
        print("\n❌ Cancelled by user", file=sys.stderr)
        return 130
    except VerificationError as exc:
        print(f"❌ {exc.message}", file=sys.stderr)
        return EXIT_VERIFY
    except NumericalError as exc:
        print(f"❌ Numerical failure: {exc.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SxError as exc:
        print(f"❌ Error: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"❌ Error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
