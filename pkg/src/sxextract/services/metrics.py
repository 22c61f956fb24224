"""
Conversation-level metrics.

Precision and recall are computed per conversation and averaged over the
corpus; the corpus F1 is the harmonic mean of the averaged precision and
recall. When a denominator is empty the metric is 1 if the other side is
empty too and 0 otherwise.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Hashable, Mapping, Sequence
from statistics import fmean

import numpy as np
from scipy.stats import mannwhitneyu
from sklearn.metrics import cohen_kappa_score

from sxextract.core.errors import SxError
from sxextract.core.logging import get_logger
from sxextract.models import (
    MODES,
    PRF,
    VIEWS,
    WEIGHTINGS,
    ConversationScore,
    MentionSet,
    MetricsReport,
    Mode,
    Ontology,
    View,
    Weighting,
)
from sxextract.services.corpus import vote

__all__ = [
    "apply_view",
    "unweighted_prf",
    "weighted_prf",
    "conversation_prf",
    "evaluate_corpus",
    "project_to_body_system",
    "cohen_kappa",
    "mann_whitney",
    "false_negative_analysis",
    "ANY_MODE_NOTE",
]

logger = get_logger("services.metrics")

ANY_MODE_NOTE = (
    "any mode: precision credits keys found in any annotator; recall is measured against the voted reference"
)

Reference = MentionSet | Sequence[MentionSet]


def _symptom_only(key: Hashable) -> Hashable:
    return key[0] if isinstance(key, tuple) else key


def apply_view(mentions: MentionSet, view: View) -> MentionSet:
    """``sx`` collapses keys to their symptom (or body system), summing counts."""
    if view == "sx_status":
        return mentions
    if view == "sx":
        return mentions.collapse(_symptom_only)
    raise SxError(f"unknown view {view!r}", component="metrics")


def _ratio(numerator: float, denominator: float, other_empty: bool) -> float:
    if denominator == 0:
        return 1.0 if other_empty else 0.0
    return numerator / denominator


def unweighted_prf(pred: MentionSet, ref: MentionSet, view: View = "sx_status") -> tuple[float, float]:
    """Precision and recall over unique keys."""
    p_keys = apply_view(pred, view).keys()
    r_keys = apply_view(ref, view).keys()
    hits = len(p_keys & r_keys)
    return _ratio(hits, len(p_keys), not r_keys), _ratio(hits, len(r_keys), not p_keys)


def weighted_prf(pred: MentionSet, ref: MentionSet, view: View = "sx_status") -> tuple[float, float]:
    """Precision weighted by predicted counts, recall by reference counts."""
    p = apply_view(pred, view)
    r = apply_view(ref, view)
    p_hits = sum(c for k, c in p.counts.items() if k in r)
    r_hits = sum(c for k, c in r.counts.items() if k in p)
    return _ratio(p_hits, p.total(), not len(r)), _ratio(r_hits, r.total(), not len(p))


def _any_prf(
    pred: MentionSet, annotators: Sequence[MentionSet], weighting: Weighting, view: View
) -> tuple[float, float]:
    voted = vote(annotators)
    union = set().union(*(apply_view(m, view).keys() for m in annotators))
    p = apply_view(pred, view)
    v = apply_view(voted, view)
    if weighting == "weighted":
        precision = _ratio(sum(c for k, c in p.counts.items() if k in union), p.total(), not len(v))
        recall = _ratio(sum(c for k, c in v.counts.items() if k in p), v.total(), not len(p))
    else:
        precision = _ratio(len(p.keys() & union), len(p), not len(v))
        recall = _ratio(len(p.keys() & v.keys()), len(v), not len(p))
    return precision, recall


def conversation_prf(
    pred: MentionSet, ref: Reference, mode: Mode, weighting: Weighting, view: View
) -> tuple[float, float]:
    if mode == "any":
        if isinstance(ref, MentionSet):
            raise SxError("any mode needs the per-annotator mention sets", component="metrics")
        return _any_prf(pred, ref, weighting, view)
    if not isinstance(ref, MentionSet):
        raise SxError(f"{mode} mode needs a single reference mention set", component="metrics")
    if weighting == "weighted":
        return weighted_prf(pred, ref, view)
    return unweighted_prf(pred, ref, view)


def evaluate_corpus(
    preds: Mapping[str, MentionSet],
    refs: Mapping[str, Reference],
    mode: Mode = "voted",
    weighting: Weighting | None = None,
    view: View | None = None,
) -> MetricsReport:
    """Macro-averaged P and R per cell; restrict to one cell with ``weighting``/``view``.

    In ``any`` mode each reference is the list of annotator mention sets.
    """
    if mode not in MODES:
        raise SxError(f"unknown mode {mode!r}", component="metrics")
    if set(preds) != set(refs):
        missing = sorted(set(refs) - set(preds))[:3]
        extra = sorted(set(preds) - set(refs))[:3]
        raise SxError(f"conversation ids differ (missing {missing}, unexpected {extra})", component="metrics")
    if not preds:
        raise SxError("cannot evaluate an empty corpus", component="metrics")
    ids = sorted(preds)
    report = MetricsReport(mode=mode)
    if mode == "any":
        report.notes.append(ANY_MODE_NOTE)
    for w in WEIGHTINGS if weighting is None else (weighting,):
        for v in VIEWS if view is None else (view,):
            scores = [ConversationScore(cid, *conversation_prf(preds[cid], refs[cid], mode, w, v)) for cid in ids]
            report.per_conversation[(w, v)] = scores
            report.cells[(w, v)] = PRF.from_pr(fmean(s.precision for s in scores), fmean(s.recall for s in scores))
    return report


def project_to_body_system(mentions: MentionSet, ontology: Ontology) -> MentionSet:
    """Map ``(symptom, status)`` keys to ``(body_system, status)``, summing merged counts."""
    return mentions.collapse(lambda key: (ontology.body_system(key[0]), *key[1:]))  # type: ignore[index]


def cohen_kappa(a: MentionSet, b: MentionSet, universe: Sequence[Hashable]) -> float:
    """Kappa over binary presence of every key in ``universe``."""
    if not universe:
        raise SxError("kappa needs a nonempty universe", component="metrics")
    missing = (a.keys() | b.keys()) - set(universe)
    if missing:
        sample = sorted(map(repr, missing))[:3]
        raise SxError(f"kappa keys outside the universe: {', '.join(sample)}", component="metrics")
    ya = np.array([key in a for key in universe], dtype=int)
    yb = np.array([key in b for key in universe], dtype=int)
    p_a, p_b = ya.mean(), yb.mean()
    p_e = p_a * p_b + (1 - p_a) * (1 - p_b)
    if p_e == 1.0:
        return 1.0
    return float(cohen_kappa_score(ya, yb, labels=[0, 1]))


def mann_whitney(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float]:
    """``(U of sample_a, two-sided p)`` from the tie-corrected normal approximation."""
    if not len(sample_a) or not len(sample_b):
        raise SxError("Mann-Whitney needs two nonempty samples", component="metrics")
    values = np.concatenate([np.asarray(sample_a, dtype=float), np.asarray(sample_b, dtype=float)])
    if np.all(values == values[0]):
        return len(sample_a) * len(sample_b) / 2.0, 1.0
    result = mannwhitneyu(sample_a, sample_b, alternative="two-sided", use_continuity=True, method="asymptotic")
    return float(result.statistic), float(result.pvalue)


def false_negative_analysis(
    preds: Mapping[str, MentionSet], refs: Mapping[str, MentionSet]
) -> list[tuple[str, int]]:
    """Per-symptom count of conversations whose reference key the prediction missed, most frequent first."""
    missed: Counter[str] = Counter()
    for cid, ref in refs.items():
        pred = preds.get(cid, MentionSet())
        for key in ref.keys() - pred.keys():
            missed[str(_symptom_only(key))] += 1
    return sorted(missed.items(), key=lambda kv: (-kv[1], kv[0]))
