"""Word vocabulary and model input units.

Every turn enters a model prefixed by a speaker marker token; an input unit is
one turn or a run of consecutive turns joined that way.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from sxextract.models import Conversation, SpanLabel, Speaker, Status

__all__ = [
    "UNK",
    "BOS",
    "EOS",
    "SPEAKER_MARKERS",
    "Vocab",
    "InputUnit",
    "UnitSpan",
    "join_turns",
    "turn_units",
    "unit_spans",
]

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"
SPEAKER_MARKERS: dict[Speaker, str] = {Speaker.DR: "<DR>", Speaker.PT: "<PT>", Speaker.OTHER: "<OTHER>"}
_SPECIALS = (UNK, BOS, EOS, *SPEAKER_MARKERS.values())


class Vocab:
    """Lower-cased word index with a single out-of-vocabulary bucket at id 0."""

    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[: len(_SPECIALS)]) != _SPECIALS:
            tokens = [*_SPECIALS, *(t for t in tokens if t not in _SPECIALS)]
        self.tokens: list[str] = list(tokens)
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, conversations: Iterable[Conversation], min_count: int = 1) -> Vocab:
        """Vocabulary of the given conversations, most frequent first, ties alphabetical."""
        counts: Counter[str] = Counter()
        for conversation in conversations:
            for turn in conversation.turns:
                counts.update(t.lower() for t in turn.tokens)
        ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls([*_SPECIALS, *ranked])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return isinstance(token, str) and token.lower() in self._ids

    def id(self, token: str) -> int:
        if token in self._ids:
            return self._ids[token]
        return self._ids.get(token.lower(), 0)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def bos(self) -> int:
        return self._ids[BOS]

    @property
    def eos(self) -> int:
        return self._ids[EOS]


@dataclass(frozen=True)
class InputUnit:
    """A model input built from ``turns`` of a conversation.

    ``positions[i]`` is the ``(turn, token)`` source of unit token ``i``, or
    ``None`` for speaker markers.
    """

    conversation_id: str
    turns: range
    tokens: tuple[str, ...]
    positions: tuple[tuple[int, int] | None, ...]

    @property
    def id(self) -> str:
        return f"{self.conversation_id}:{self.turns.start}-{self.turns.stop}"

    def offset(self, turn: int) -> int:
        """Unit index of the first token of ``turn``."""
        for i, pos in enumerate(self.positions):
            if pos is not None and pos[0] == turn:
                return i
        raise KeyError(turn)


@dataclass(frozen=True)
class UnitSpan:
    start: int
    end: int
    symptom: str
    status: Status


def join_turns(conversation: Conversation, turns: range) -> InputUnit:
    tokens: list[str] = []
    positions: list[tuple[int, int] | None] = []
    for t in turns:
        turn = conversation.turns[t]
        tokens.append(SPEAKER_MARKERS[turn.speaker])
        positions.append(None)
        tokens.extend(turn.tokens)
        positions.extend((t, i) for i in range(len(turn)))
    return InputUnit(conversation.id, turns, tuple(tokens), tuple(positions))


def turn_units(conversation: Conversation, window_turns: int = 1) -> list[InputUnit]:
    """Non-overlapping units of ``window_turns`` consecutive turns covering the conversation."""
    n = len(conversation)
    return [join_turns(conversation, range(s, min(s + window_turns, n))) for s in range(0, n, window_turns)]


def unit_spans(unit: InputUnit, labels: Iterable[SpanLabel]) -> list[UnitSpan]:
    """Labels falling inside ``unit``, re-indexed to unit positions and sorted."""
    spans = []
    for label in labels:
        if label.turn in unit.turns:
            base = unit.offset(label.turn)
            spans.append(UnitSpan(base + label.start, base + label.end, label.symptom, label.status))
    spans.sort(key=lambda s: (s.start, s.end))
    # overlapping gold spans cannot both be tagged; keep the earlier one
    kept: list[UnitSpan] = []
    for span in spans:
        if kept and span.start < kept[-1].end:
            continue
        kept.append(span)
    return kept
