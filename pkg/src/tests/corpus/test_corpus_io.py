"""Tests for corpus and ontology files."""

import json
from pathlib import Path

import pytest

from sxextract.core.errors import CorpusFormatError
from sxextract.models import MentionSet, Speaker
from sxextract.services.corpus_io import read_corpus, read_ontology, write_corpus, write_ontology


def _record(**changes: object) -> dict:
    record = {
        "id": "c1",
        "turns": [{"speaker": "PT", "tokens": ["a", "dry", "cough"]}],
        "annotations": {"s1": [{"turn": 0, "start": 2, "end": 3, "symptom": "cough", "status": "experienced"}]},
    }
    record.update(changes)
    return record


def _write(path: Path, *records: object) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


class TestGoldenFiles:
    """The packaged examples parse."""

    def test_golden_ontology(self, golden_ontology_path, clinic_ontology) -> None:
        """Comments are skipped and order is kept."""
        assert read_ontology(golden_ontology_path) == clinic_ontology

    def test_golden_corpus(self, golden_corpus_path, clinic_ontology) -> None:
        """Both records load with their annotators and optional truth."""
        corpus = read_corpus(golden_corpus_path, clinic_ontology)
        assert [c.id for c in corpus] == ["golden-00001", "golden-00002"]
        assert corpus[0].annotators == ["scribe_1", "scribe_2", "scribe_3"]
        assert corpus[0].truth is not None
        assert corpus[1].truth is None
        assert corpus[1].conversation.turns[1].speaker == Speaker.PT
        assert corpus[0].mention_sets()["scribe_3"] == MentionSet({("cough", "experienced"): 1})

    def test_write_then_read(self, tmp_path, tiny_corpus, tiny_ontology) -> None:
        """Written corpora and ontologies read back equal."""
        assert write_corpus(tmp_path / "c.jsonl", tiny_corpus) == len(tiny_corpus)
        write_ontology(tmp_path / "o.tsv", tiny_ontology)
        ontology = read_ontology(tmp_path / "o.tsv")
        assert ontology == tiny_ontology
        assert read_corpus(tmp_path / "c.jsonl", ontology) == tiny_corpus


class TestCorpusErrors:
    """Malformed records name the line and field."""

    def test_empty_file_is_empty_corpus(self, tmp_path) -> None:
        """Blank lines are skipped."""
        path = tmp_path / "c.jsonl"
        path.write_text("\n\n", encoding="utf-8")
        assert read_corpus(path) == []

    def test_missing_file(self, tmp_path) -> None:
        """A missing file is a format error."""
        with pytest.raises(CorpusFormatError, match="not found"):
            read_corpus(tmp_path / "absent.jsonl")

    def test_invalid_json(self, tmp_path) -> None:
        """Broken JSON reports its line."""
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps(_record()) + "\n{oops\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="^line 2: invalid JSON"):
            read_corpus(path)

    def test_unknown_speaker(self, tmp_path) -> None:
        """Speakers are DR, PT or OTHER."""
        path = _write(tmp_path / "c.jsonl", _record(turns=[{"speaker": "NURSE", "tokens": ["hi"]}], annotations={}))
        with pytest.raises(CorpusFormatError, match=r"line 1, field turns\[0\].speaker: unknown speaker"):
            read_corpus(path)

    def test_unknown_symptom(self, tmp_path, clinic_ontology) -> None:
        """Label symptoms must belong to the ontology."""
        record = _record()
        record["annotations"]["s1"][0]["symptom"] = "caugh"
        path = _write(tmp_path / "c.jsonl", record)
        with pytest.raises(
            CorpusFormatError, match=r"line 1, field annotations.s1\[0\].symptom: unknown symptom 'caugh'"
        ):
            read_corpus(path, clinic_ontology)

    def test_span_outside_turn(self, tmp_path) -> None:
        """Spans must fit their turn."""
        record = _record()
        record["annotations"]["s1"][0]["end"] = 9
        with pytest.raises(CorpusFormatError, match=r"annotations.s1\[0\].start"):
            read_corpus(_write(tmp_path / "c.jsonl", record))

    def test_unknown_status(self, tmp_path) -> None:
        """Statuses come from the fixed set."""
        record = _record()
        record["annotations"]["s1"][0]["status"] = "maybe"
        with pytest.raises(CorpusFormatError, match="unknown status 'maybe'"):
            read_corpus(_write(tmp_path / "c.jsonl", record))

    def test_duplicate_ids(self, tmp_path) -> None:
        """Conversation ids are unique within a file."""
        with pytest.raises(CorpusFormatError, match="line 2, field id: duplicate"):
            read_corpus(_write(tmp_path / "c.jsonl", _record(), _record()))

    def test_stale_mentions(self, tmp_path) -> None:
        """Stored mention counts must agree with the labels."""
        path = _write(tmp_path / "c.jsonl", _record(mentions={"s1": [["cough", "experienced", 2]]}))
        with pytest.raises(CorpusFormatError, match="mentions.s1"):
            read_corpus(path)

    def test_empty_tokens(self, tmp_path) -> None:
        """Turns need nonempty tokens."""
        path = _write(tmp_path / "c.jsonl", _record(turns=[{"speaker": "PT", "tokens": []}], annotations={}))
        with pytest.raises(CorpusFormatError, match=r"turns\[0\].tokens"):
            read_corpus(path)


class TestOntologyErrors:
    """Malformed ontology files."""

    def test_bad_line(self, tmp_path) -> None:
        """Each line needs exactly two columns."""
        path = tmp_path / "o.tsv"
        path.write_text("cough\trespiratory\nheadache\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="line 2"):
            read_ontology(path)

    def test_duplicate_symptom(self, tmp_path) -> None:
        """Symptom ids are unique."""
        path = tmp_path / "o.tsv"
        path.write_text("cough\trespiratory\ncough\tneurological\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="duplicate"):
            read_ontology(path)
