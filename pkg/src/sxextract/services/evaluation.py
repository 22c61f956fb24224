"""
Evaluation service for sxextract.

Builds references in single, voted and any mode, runs a model over a
corpus and scores it, optionally after projecting to body systems or
after simulating recognizer noise on the transcripts.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean

from sxextract.core import AsrNoiseConfig
from sxextract.core.errors import SxError
from sxextract.core.logging import get_logger
from sxextract.extractors.base import Extractor
from sxextract.extractors.seq2seq import Seq2SeqModel, highlighted_tokens
from sxextract.models import AnnotatedConversation, MentionSet, MetricsReport, Mode, Ontology, View, Weighting
from sxextract.services.corpus import AsrReport, TransferReport, asr_corpus, single_reference, vote
from sxextract.services.metrics import evaluate_corpus, false_negative_analysis, mann_whitney, project_to_body_system

__all__ = [
    "PairedComparison",
    "default_mode",
    "build_references",
    "predict_corpus",
    "score_predictions",
    "evaluate_model",
    "evaluate_asr",
    "missed_symptoms",
    "paired_comparison",
    "export_attention",
]

logger = get_logger("services.evaluation")

Reference = MentionSet | list[MentionSet]


def default_mode(corpus: Sequence[AnnotatedConversation]) -> Mode:
    """``voted`` when every conversation has three annotators, else ``single``."""
    if corpus and all(len(item.annotators) == 3 for item in corpus):
        return "voted"
    return "single"


def build_references(corpus: Sequence[AnnotatedConversation], mode: Mode, seed: int = 0) -> dict[str, Reference]:
    refs: dict[str, Reference] = {}
    for item in corpus:
        sets = list(item.mention_sets().values())
        if mode == "single":
            if not sets:
                raise SxError(f"{item.id} has no annotations", component="evaluation")
            refs[item.id] = single_reference(item, seed)
        elif mode == "voted":
            refs[item.id] = vote(sets)
        elif mode == "any":
            if len(sets) != 3:
                raise SxError(f"any mode needs three annotators, {item.id} has {len(sets)}", component="evaluation")
            refs[item.id] = sets
        else:
            raise SxError(f"unknown mode {mode!r}", component="evaluation")
    return refs


def _project(ref: Reference, ontology: Ontology) -> Reference:
    if isinstance(ref, MentionSet):
        return project_to_body_system(ref, ontology)
    return [project_to_body_system(m, ontology) for m in ref]


def predict_corpus(model: Extractor, corpus: Sequence[AnnotatedConversation]) -> dict[str, MentionSet]:
    return {item.id: model.infer_conversation(item.conversation) for item in corpus}


def score_predictions(
    preds: Mapping[str, MentionSet],
    corpus: Sequence[AnnotatedConversation],
    ontology: Ontology,
    mode: Mode,
    seed: int = 0,
    project: bool = False,
    predictions_projected: bool = False,
) -> MetricsReport:
    """Score predictions; ``project`` maps both sides to body systems first.

    ``predictions_projected`` marks predictions that are already keyed by body system.
    """
    refs = build_references(corpus, mode, seed)
    project = project or predictions_projected
    if project:
        refs = {cid: _project(ref, ontology) for cid, ref in refs.items()}
        if not predictions_projected:
            preds = {cid: project_to_body_system(m, ontology) for cid, m in preds.items()}
    report = evaluate_corpus(preds, refs, mode)
    report.projected = project
    return report


def evaluate_model(
    model: Extractor,
    corpus: Sequence[AnnotatedConversation],
    modes: Sequence[Mode] = ("voted",),
    seed: int = 0,
    project: bool = False,
    preds: Mapping[str, MentionSet] | None = None,
) -> dict[Mode, MetricsReport]:
    """One report per mode; predictions are computed once and shared."""
    if preds is None:
        preds = predict_corpus(model, corpus)
    reports = {}
    for mode in modes:
        report = score_predictions(
            preds,
            corpus,
            model.ontology,
            mode,
            seed,
            project=project,
            predictions_projected=model.key_space == "body_system",
        )
        reports[mode] = report
        logger.info(
            "model evaluated",
            extra={
                "model": model.model_type,
                "mode": mode,
                "projected": report.projected,
                "n_conversations": len(corpus),
                "f1": round(report.cell().f1, 4),
            },
        )
    return reports


def missed_symptoms(
    model: Extractor,
    corpus: Sequence[AnnotatedConversation],
    preds: Mapping[str, MentionSet],
    seed: int = 0,
    project: bool = False,
) -> list[tuple[str, int]]:
    """False negatives of ``preds`` against the corpus's default reference."""
    mode = default_mode(corpus)
    refs = build_references(corpus, mode, seed)
    if project or model.key_space == "body_system":
        refs = {cid: _project(ref, model.ontology) for cid, ref in refs.items()}
        if model.key_space == "symptom":
            preds = {cid: project_to_body_system(m, model.ontology) for cid, m in preds.items()}
    return false_negative_analysis(preds, refs)  # type: ignore[arg-type]


def evaluate_asr(
    model: Extractor,
    corpus: Sequence[AnnotatedConversation],
    asr: AsrNoiseConfig,
    seed: int,
    modes: Sequence[Mode] = ("voted",),
    project: bool = False,
) -> tuple[dict[Mode, MetricsReport], AsrReport, TransferReport]:
    """Evaluate on simulated recognizer transcripts with transferred reference labels."""
    noisy, asr_report, transfer = asr_corpus(corpus, asr, seed)
    reports = evaluate_model(model, noisy, modes, seed, project)
    for report in reports.values():
        report.notes.append(f"simulated asr: wer={asr_report.wer:.4f}, discarded labels={transfer.discarded}")
    return reports, asr_report, transfer


@dataclass(frozen=True)
class PairedComparison:
    mean_a: float
    mean_b: float
    u_statistic: float
    p_value: float
    n_conversations: int


def paired_comparison(
    a: MetricsReport, b: MetricsReport, weighting: Weighting = "unweighted", view: View = "sx_status"
) -> PairedComparison:
    """Mann-Whitney test on the per-conversation F1 of two reports over the same corpus."""
    ids_a = [s.conversation_id for s in a.per_conversation[(weighting, view)]]
    ids_b = [s.conversation_id for s in b.per_conversation[(weighting, view)]]
    if ids_a != ids_b:
        raise SxError("reports cover different conversations", component="evaluation")
    f1_a = a.conversation_f1(weighting, view)
    f1_b = b.conversation_f1(weighting, view)
    u, p = mann_whitney(f1_a, f1_b)
    return PairedComparison(fmean(f1_a), fmean(f1_b), u, p, len(f1_a))


def export_attention(
    model: Seq2SeqModel, corpus: Sequence[AnnotatedConversation], path: Path, threshold: float | None = None
) -> int:
    """One JSON line per (conversation, window, step); returns the number of rows written."""
    threshold = model.config.attention_highlight if threshold is None else threshold
    targets = model.targets
    rows = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for item in corpus:
            for w, (window, decoded) in enumerate(model.decode_windows(item.conversation)):
                highlighted = highlighted_tokens(decoded.attention, window.tokens, threshold)
                for step, weights in enumerate(decoded.attention):
                    record = {
                        "conversation": item.id,
                        "window": w,
                        "turns": [window.turns.start, window.turns.stop],
                        "step": step,
                        "output": targets.tokens[decoded.tokens[step]],
                        "weights": [round(float(x), 6) for x in weights],
                        "highlighted": highlighted,
                    }
                    handle.write(json.dumps(record, sort_keys=True))
                    handle.write("\n")
                    rows += 1
    return rows
