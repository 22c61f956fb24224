"""
Data models for conversations, annotations and mention sets.

Following the separation of concerns principle, this module contains
only data structures and their own consistency checks; generation,
reference construction and serialization live in the services.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Callable, Hashable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__


from sxextract.core.errors import CorpusFormatError, OntologyError

__all__ = [
    "Status",
    "STATUSES",
    "Speaker",
    "Ontology",
    "Turn",
    "Conversation",
    "SpanLabel",
    "MentionSet",
    "AnnotatedConversation",
]


class Status(StrEnum):
    """Whether the patient has the symptom."""

    EXPERIENCED = "experienced"
    NOT_EXPERIENCED = "not_experienced"
    OTHER = "other"


STATUSES: tuple[Status, ...] = (Status.EXPERIENCED, Status.NOT_EXPERIENCED, Status.OTHER)


class Speaker(StrEnum):
    DR = "DR"
    PT = "PT"
    OTHER = "OTHER"


@dataclass(frozen=True)
class Ontology:
    """Ordered symptom ids, each belonging to exactly one body system."""

    symptoms: tuple[str, ...]
    systems: Mapping[str, str]

    def __post_init__(self) -> None:
        if len(set(self.symptoms)) != len(self.symptoms):
            raise OntologyError("duplicate symptom ids in ontology")
        missing = [s for s in self.symptoms if s not in self.systems]
        if missing:
            raise OntologyError(f"symptoms without a body system: {missing[:5]}")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symptoms)})

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> Ontology:
        pairs = list(pairs)
        return cls(tuple(s for s, _ in pairs), {s: b for s, b in pairs})

    def __len__(self) -> int:
        return len(self.symptoms)

    def __contains__(self, symptom: object) -> bool:
        return symptom in self._index  # type: ignore[attr-defined]

    def index(self, symptom: str) -> int:
        try:
            return self._index[symptom]  # type: ignore[attr-defined,no-any-return]
        except KeyError as exc:
            raise OntologyError(f"unknown symptom id {symptom!r}") from exc

    def body_system(self, symptom: str) -> str:
        try:
            return self.systems[symptom]
        except KeyError as exc:
            raise OntologyError(f"unknown symptom id {symptom!r}") from exc

    @property
    def body_systems(self) -> tuple[str, ...]:
        """Body systems in order of first appearance."""
        return tuple(dict.fromkeys(self.systems[s] for s in self.symptoms))

    def symptoms_in(self, system: str) -> tuple[str, ...]:
        return tuple(s for s in self.symptoms if self.systems[s] == system)

    def keys(self) -> list[tuple[str, str]]:
        """The (symptom, status) universe."""
        return [(s, str(st)) for s in self.symptoms for st in STATUSES]


@dataclass(frozen=True)
class Turn:
    speaker: Speaker
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise CorpusFormatError("turn has no tokens", field="tokens")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Conversation:
    """A transcript: one or more nonempty speaker turns."""

    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        if not self.turns:
            raise CorpusFormatError(f"conversation {self.id} has no turns", field="turns")

    def __len__(self) -> int:
        return len(self.turns)

    @property
    def n_tokens(self) -> int:
        return sum(len(t) for t in self.turns)


@dataclass(frozen=True, order=True)
class SpanLabel:
    """A half-open token interval of one turn tagged with a symptom and status."""

    turn: int
    start: int
    end: int
    symptom: str
    status: Status

    def check(self, conversation: Conversation, ontology: Ontology | None = None) -> None:
        """Raise :class:`CorpusFormatError` if the span does not fit the conversation."""
        if not 0 <= self.turn < len(conversation):
            raise CorpusFormatError(f"turn {self.turn} outside conversation {conversation.id}", field="turn")
        length = len(conversation.turns[self.turn])
        if not 0 <= self.start < self.end <= length:
            raise CorpusFormatError(
                f"span [{self.start}, {self.end}) invalid for turn {self.turn} of length {length}", field="start"
            )
        if ontology is not None and self.symptom not in ontology:
            raise CorpusFormatError(f"unknown symptom {self.symptom!r}", field="symptom")

    @property
    def key(self) -> tuple[str, str]:
        return (self.symptom, str(self.status))


@dataclass(frozen=True)
class MentionSet:
    """Multiset of mention keys with positive counts.

    Keys are ``(symptom, status)`` pairs unless a view or a projection
    collapsed them.
    """

    counts: Mapping[Hashable, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {k: int(c) for k, c in self.counts.items() if c > 0}
        object.__setattr__(self, "counts", dict(sorted(clean.items(), key=lambda kv: repr(kv[0]))))

    @classmethod
    def from_labels(cls, labels: Iterable[SpanLabel]) -> MentionSet:
        return cls(Counter(label.key for label in labels))

    @classmethod
    def from_keys(cls, keys: Iterable[Hashable]) -> MentionSet:
        return cls(Counter(keys))

    def __contains__(self, key: object) -> bool:
        return key in self.counts

    def __iter__(self) -> Iterator[Hashable]:
        return iter(self.counts)

    def __len__(self) -> int:
        return len(self.counts)

    def count(self, key: Hashable) -> int:
        return self.counts.get(key, 0)

    def keys(self) -> set[Hashable]:
        return set(self.counts)

    def total(self) -> int:
        return sum(self.counts.values())

    def collapse(self, fn: Callable[[Hashable], Hashable]) -> MentionSet:
        """Map every key through ``fn``, summing counts of keys that merge."""
        merged: Counter[Hashable] = Counter()
        for key, count in self.counts.items():
            merged[fn(key)] += count
        return MentionSet(merged)

    def scaled(self, factor: int) -> MentionSet:
        return MentionSet({k: c * factor for k, c in self.counts.items()})

    def to_rows(self) -> list[list[object]]:
        """``[[*key, count], ...]`` for JSON output."""
        rows = []
        for key, count in self.counts.items():
            parts = list(key) if isinstance(key, tuple) else [key]
            rows.append([*parts, count])
        return rows


@dataclass(frozen=True)
class AnnotatedConversation:
    """A conversation plus one label list per annotator.

    ``truth`` holds the generator's exact labels when the corpus is synthetic.
    """

    conversation: Conversation
    annotations: Mapping[str, tuple[SpanLabel, ...]]
    truth: tuple[SpanLabel, ...] | None = None

    def __post_init__(self) -> None:
        for labels in self.annotations.values():
            for label in labels:
                label.check(self.conversation)
        for label in self.truth or ():
            label.check(self.conversation)

    @property
    def id(self) -> str:
        return self.conversation.id

    @property
    def annotators(self) -> list[str]:
        return list(self.annotations)

    def labels(self, annotator: str | None = None) -> tuple[SpanLabel, ...]:
        """Labels of ``annotator``, or of the first annotator when omitted."""
        if annotator is None:
            if not self.annotations:
                return ()
            annotator = next(iter(self.annotations))
        return self.annotations[annotator]

    def mention_sets(self) -> dict[str, MentionSet]:
        return {name: MentionSet.from_labels(labels) for name, labels in self.annotations.items()}
