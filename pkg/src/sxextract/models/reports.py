"""Result structures produced by the metrics and evaluation services."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Protocol

from sxextract.models.corpus import Conversation, MentionSet

Weighting = Literal["unweighted", "weighted"]
View = Literal["sx", "sx_status"]
Mode = Literal["single", "voted", "any"]

WEIGHTINGS: tuple[Weighting, ...] = ("unweighted", "weighted")
VIEWS: tuple[View, ...] = ("sx", "sx_status")
MODES: tuple[Mode, ...] = ("single", "voted", "any")

__all__ = [
    "Weighting",
    "View",
    "Mode",
    "WEIGHTINGS",
    "VIEWS",
    "MODES",
    "PRF",
    "ConversationScore",
    "MetricsReport",
    "ExtractorProtocol",
]


def harmonic_mean(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> PRF:
        return cls(precision, recall, harmonic_mean(precision, recall))

    def render(self) -> str:
        """``F1 (Precision, Recall)`` cell text."""
        return f"{self.f1:.3f} ({self.precision:.3f}, {self.recall:.3f})"


@dataclass(frozen=True)
class ConversationScore:
    conversation_id: str
    precision: float
    recall: float

    @property
    def f1(self) -> float:
        return harmonic_mean(self.precision, self.recall)


@dataclass
class MetricsReport:
    """Corpus-level cells per (weighting, view) with per-conversation breakdowns."""

    mode: Mode
    cells: dict[tuple[Weighting, View], PRF] = field(default_factory=dict)
    per_conversation: dict[tuple[Weighting, View], list[ConversationScore]] = field(default_factory=dict)
    projected: bool = False
    notes: list[str] = field(default_factory=list)

    def cell(self, weighting: Weighting = "unweighted", view: View = "sx_status") -> PRF:
        return self.cells[(weighting, view)]

    def conversation_f1(self, weighting: Weighting = "unweighted", view: View = "sx_status") -> list[float]:
        return [s.f1 for s in self.per_conversation[(weighting, view)]]

    def flat_rows(self, label: str) -> list[dict[str, object]]:
        """One flat record per cell for machine-readable output."""
        rows: list[dict[str, object]] = []
        for (weighting, view), prf in sorted(self.cells.items()):
            rows.append(
                {
                    "model": label,
                    "mode": self.mode,
                    "projected": self.projected,
                    "weighting": weighting,
                    "view": view,
                    "precision": prf.precision,
                    "recall": prf.recall,
                    "f1": prf.f1,
                }
            )
        return rows


class ExtractorProtocol(Protocol):
    """Anything that maps a conversation to its predicted mentions."""

    def infer_conversation(self, conversation: Conversation) -> MentionSet:
        """Predict the (symptom, status) mentions of one conversation."""
        ...

