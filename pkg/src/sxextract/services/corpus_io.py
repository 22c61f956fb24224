"""Line-delimited corpus files and tab-separated ontology files."""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

from sxextract.core.errors import CorpusFormatError, OntologyError
from sxextract.models import (
    AnnotatedConversation,
    Conversation,
    Ontology,
    SpanLabel,
    Speaker,
    Status,
    Turn,
)

__all__ = [
    "conversation_to_record",
    "record_to_conversation",
    "write_corpus",
    "read_corpus",
    "write_ontology",
    "read_ontology",
]


def _label_record(label: SpanLabel) -> dict[str, Any]:
    return {
        "turn": label.turn,
        "start": label.start,
        "end": label.end,
        "symptom": label.symptom,
        "status": str(label.status),
    }


def conversation_to_record(item: AnnotatedConversation) -> dict[str, Any]:
    """Plain-JSON record; ``mentions`` is derived and re-checked on load."""
    record: dict[str, Any] = {
        "id": item.id,
        "turns": [{"speaker": str(t.speaker), "tokens": list(t.tokens)} for t in item.conversation.turns],
        "annotations": {name: [_label_record(lab) for lab in labels] for name, labels in item.annotations.items()},
        "mentions": {name: m.to_rows() for name, m in item.mention_sets().items()},
    }
    if item.truth is not None:
        record["truth"] = [_label_record(lab) for lab in item.truth]
    return record


def _require(data: Mapping[str, Any], key: str, kind: type | tuple[type, ...], path: str, line: int | None) -> Any:
    if key not in data:
        raise CorpusFormatError("missing field", line=line, field=f"{path}{key}")
    value = data[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise CorpusFormatError(f"expected {getattr(kind, '__name__', kind)}", line=line, field=f"{path}{key}")
    return value


def _parse_label(
    data: Any, path: str, line: int | None, conversation: Conversation, ontology: Ontology | None
) -> SpanLabel:
    if not isinstance(data, Mapping):
        raise CorpusFormatError("expected an object", line=line, field=path)
    status = _require(data, "status", str, f"{path}.", line)
    try:
        parsed = Status(status)
    except ValueError as exc:
        raise CorpusFormatError(f"unknown status {status!r}", line=line, field=f"{path}.status") from exc
    label = SpanLabel(
        _require(data, "turn", int, f"{path}.", line),
        _require(data, "start", int, f"{path}.", line),
        _require(data, "end", int, f"{path}.", line),
        _require(data, "symptom", str, f"{path}.", line),
        parsed,
    )
    try:
        label.check(conversation, ontology)
    except CorpusFormatError as exc:
        raise CorpusFormatError(exc.message.split(": ", 1)[-1], line=line, field=f"{path}.{exc.field}") from exc
    return label


def record_to_conversation(
    record: Any, line: int | None = None, ontology: Ontology | None = None
) -> AnnotatedConversation:
    """Parse and validate one record; errors carry ``line`` and the field path."""
    if not isinstance(record, Mapping):
        raise CorpusFormatError("record must be a JSON object", line=line)
    conv_id = _require(record, "id", str, "", line)
    raw_turns = _require(record, "turns", list, "", line)
    if not raw_turns:
        raise CorpusFormatError("conversation has no turns", line=line, field="turns")
    turns = []
    for t, raw in enumerate(raw_turns):
        path = f"turns[{t}]."
        if not isinstance(raw, Mapping):
            raise CorpusFormatError("expected an object", line=line, field=f"turns[{t}]")
        speaker = _require(raw, "speaker", str, path, line)
        tokens = _require(raw, "tokens", list, path, line)
        if not tokens or not all(isinstance(tok, str) and tok for tok in tokens):
            raise CorpusFormatError("tokens must be a nonempty list of strings", line=line, field=f"{path}tokens")
        try:
            turns.append(Turn(Speaker(speaker), tuple(tokens)))
        except ValueError as exc:
            raise CorpusFormatError(f"unknown speaker {speaker!r}", line=line, field=f"{path}speaker") from exc
    conversation = Conversation(conv_id, tuple(turns))

    raw_annotations = _require(record, "annotations", dict, "", line)
    annotations = {}
    for name, labels in raw_annotations.items():
        if not isinstance(labels, list):
            raise CorpusFormatError("expected a list", line=line, field=f"annotations.{name}")
        annotations[name] = tuple(
            _parse_label(lab, f"annotations.{name}[{i}]", line, conversation, ontology) for i, lab in enumerate(labels)
        )
    truth = None
    if "truth" in record:
        raw_truth = _require(record, "truth", list, "", line)
        truth = tuple(_parse_label(lab, f"truth[{i}]", line, conversation, ontology) for i, lab in enumerate(raw_truth))
    item = AnnotatedConversation(conversation, annotations, truth)

    if "mentions" in record:
        stored = _require(record, "mentions", dict, "", line)
        for name, mentions in item.mention_sets().items():
            if stored.get(name) != mentions.to_rows():
                raise CorpusFormatError(
                    "stored mention counts disagree with the labels", line=line, field=f"mentions.{name}"
                )
    return item


def write_corpus(path: Path, corpus: Iterable[AnnotatedConversation]) -> int:
    """Write one JSON record per line; returns the record count."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for item in corpus:
            handle.write(json.dumps(conversation_to_record(item), sort_keys=True, ensure_ascii=False))
            handle.write("\n")
            count += 1
    return count


def read_corpus(path: Path, ontology: Ontology | None = None) -> list[AnnotatedConversation]:
    """Read a corpus file; blank lines are skipped and an empty file is an empty corpus."""
    corpus = []
    seen: set[str] = set()
    try:
        handle = Path(path).open(encoding="utf-8")
    except FileNotFoundError as exc:
        raise CorpusFormatError(f"corpus file not found: {path}") from exc
    with handle:
        for number, text in enumerate(handle, start=1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", line=number) from exc
            item = record_to_conversation(record, line=number, ontology=ontology)
            if item.id in seen:
                raise CorpusFormatError(f"duplicate conversation id {item.id!r}", line=number, field="id")
            seen.add(item.id)
            corpus.append(item)
    return corpus


def write_ontology(path: Path, ontology: Ontology) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for symptom in ontology.symptoms:
            handle.write(f"{symptom}\t{ontology.body_system(symptom)}\n")


def read_ontology(path: Path) -> Ontology:
    """``symptom_id<TAB>body_system`` per line; blank lines and ``#`` comments are ignored."""
    pairs: list[tuple[str, str]] = []
    try:
        lines: Sequence[str] = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise CorpusFormatError(f"ontology file not found: {path}") from exc
    for number, text in enumerate(lines, start=1):
        if not text.strip() or text.startswith("#"):
            continue
        parts = text.split("\t")
        if len(parts) != 2 or not all(p.strip() for p in parts):
            raise CorpusFormatError("expected symptom_id<TAB>body_system", line=number)
        pairs.append((parts[0].strip(), parts[1].strip()))
    try:
        return Ontology.from_pairs(pairs)
    except OntologyError as exc:
        raise CorpusFormatError(exc.message) from exc
