"""Inter-annotator agreement and human-versus-voted scoring."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from itertools import combinations
from statistics import fmean

from sxextract.core.errors import SxError
from sxextract.core.logging import get_logger
from sxextract.models import AnnotatedConversation, MetricsReport, Ontology
from sxextract.services.corpus import vote
from sxextract.services.metrics import cohen_kappa, evaluate_corpus

__all__ = ["AgreementReport", "corpus_kappa", "evaluate_annotators"]

logger = get_logger("services.agreement")


@dataclass(frozen=True)
class AgreementReport:
    kappa: float
    n_conversations: int
    n_pairs: int


def corpus_kappa(corpus: Sequence[AnnotatedConversation], ontology: Ontology) -> AgreementReport:
    """Kappa averaged over conversations and annotator pairs.

    The universe is every (symptom, status) key of the ontology;
    conversations with fewer than two annotators are skipped.
    """
    universe = ontology.keys()
    values = []
    used = 0
    for item in corpus:
        sets = list(item.mention_sets().values())
        if len(sets) < 2:
            continue
        used += 1
        values.extend(cohen_kappa(a, b, universe) for a, b in combinations(sets, 2))
    if not values:
        raise SxError("agreement needs conversations with at least two annotators", component="agreement")
    report = AgreementReport(fmean(values), used, len(values))
    logger.info("annotator agreement", extra={"kappa": round(report.kappa, 4), "n_conversations": used})
    return report


def evaluate_annotators(corpus: Sequence[AnnotatedConversation]) -> dict[str, MetricsReport]:
    """Score each annotator position against the voted reference of all three."""
    if not corpus:
        raise SxError("cannot evaluate annotators on an empty corpus", component="agreement")
    names = corpus[0].annotators
    if len(names) != 3 or any(len(item.annotators) != 3 for item in corpus):
        raise SxError("annotator scoring needs three annotators per conversation", component="agreement")
    voted = {}
    per_position: list[dict] = [{} for _ in names]
    for item in corpus:
        sets = list(item.mention_sets().values())
        voted[item.id] = vote(sets)
        for i, mentions in enumerate(sets):
            per_position[i][item.id] = mentions
    return {name: evaluate_corpus(per_position[i], voted, mode="voted") for i, name in enumerate(names)}
