"""Tests for recognizer simulation, alignment and label transfer."""

import pytest

from sxextract.core import AsrNoiseConfig
from sxextract.core.errors import AlignmentError
from sxextract.models import Conversation, SpanLabel, Speaker, Status, Turn
from sxextract.services.corpus import align_tokens, asr_corpus, generate_corpus, simulate_asr, transfer_labels


def _with_patient_turn(tokens: tuple[str, ...], speaker: Speaker = Speaker.PT) -> Conversation:
    return Conversation("clinic-1", (Turn(Speaker.DR, ("any", "cough", "?")), Turn(speaker, tokens)))


class TestSimulateAsr:
    """Per-token noise."""

    def test_zero_rates_are_identity(self, clinic_conversation) -> None:
        """Without noise the transcript is unchanged."""
        noisy, report = simulate_asr(clinic_conversation.conversation, AsrNoiseConfig(0.0, 0.0, 0.0), seed=0)
        assert noisy == clinic_conversation.conversation
        assert report.wer == 0.0
        assert report.reference_tokens == 7

    def test_deterministic_per_seed(self, tiny_corpus) -> None:
        """Noise depends on the seed and the conversation id only."""
        conversation = tiny_corpus[0].conversation
        assert simulate_asr(conversation, AsrNoiseConfig(), 4) == simulate_asr(conversation, AsrNoiseConfig(), 4)

    def test_turns_keep_a_token(self, clinic_conversation) -> None:
        """Deleting everything still leaves each turn's last token."""
        noisy, report = simulate_asr(clinic_conversation.conversation, AsrNoiseConfig(0.0, 1.0, 0.0), seed=0)
        assert [t.tokens for t in noisy.turns] == [("?",), ("cough",)]
        assert report.deletions == 5
        assert report.wer == pytest.approx(5 / 7)


class TestAlignTokens:
    """Minimum-edit-distance alignment."""

    def test_deletion(self) -> None:
        """A deleted source token maps to nothing."""
        assert align_tokens(["a", "b", "c"], ["a", "c"]) == [0, None, 1]

    def test_insertion_and_case(self) -> None:
        """Inserted tokens are skipped and matching ignores case."""
        assert align_tokens(["Dry", "cough"], ["dry", "uh", "cough"]) == [0, 2]

    def test_substitution_aligns(self) -> None:
        """A substituted token still aligns to its position."""
        assert align_tokens(["a", "cough"], ["a", "coughs"]) == [0, 1]


class TestTransferLabels:
    """Moving labels onto a parallel transcript."""

    def test_insertion_shifts_span(self, clinic_conversation) -> None:
        """Spans move with inserted tokens."""
        target = _with_patient_turn(("yes", "uh", "a", "dry", "cough"))
        moved, report = transfer_labels(clinic_conversation, target)
        expected = SpanLabel(1, 4, 5, "cough", Status.EXPERIENCED)
        assert moved.annotations["a"] == (expected,)
        assert moved.truth == (expected,)
        assert (report.transferred, report.discarded) == (2, 0)

    def test_deleted_token_discards_span(self, clinic_conversation) -> None:
        """A span with an unaligned token is dropped and counted."""
        moved, report = transfer_labels(clinic_conversation, _with_patient_turn(("yes", "a", "dry")))
        assert moved.annotations == {"a": (), "b": (), "c": ()}
        assert report.discard_rate == 1.0

    def test_turn_count_mismatch(self, clinic_conversation) -> None:
        """Transcripts must have the same turns."""
        target = Conversation("clinic-1", (Turn(Speaker.DR, ("hi",)),))
        with pytest.raises(AlignmentError, match="turns"):
            transfer_labels(clinic_conversation, target)

    def test_speaker_mismatch(self, clinic_conversation) -> None:
        """Speakers must agree turn by turn."""
        with pytest.raises(AlignmentError, match="speaker mismatch at turn 1"):
            transfer_labels(clinic_conversation, _with_patient_turn(("yes",), Speaker.OTHER))

    def test_asr_corpus_totals(self, tiny_corpus) -> None:
        """Corpus-level reports sum the per-conversation ones."""
        noisy, asr, transfer = asr_corpus(tiny_corpus, AsrNoiseConfig(), seed=2)
        assert [c.id for c in noisy] == [c.id for c in tiny_corpus]
        assert asr.reference_tokens == sum(c.conversation.n_tokens for c in tiny_corpus)
        labels = sum(len(c.labels(name)) for c in tiny_corpus for name in c.annotators)
        assert transfer.transferred + transfer.discarded == labels


class TestCorpusNoiseLevel:
    """Recognizer noise over a 200-conversation corpus at the default 20% word error rate."""

    @pytest.fixture()
    def corpus(self, testing_config, tiny_ontology):
        return generate_corpus(testing_config.generator, 9, tiny_ontology, n_annotators=3, n_conversations=200)

    def test_measured_wer_matches_configured_rates(self, corpus) -> None:
        """Counted edits come to 0.2 +/- 0.02 and agree with the transcript lengths."""
        config = AsrNoiseConfig()
        assert config.substitution_rate + config.deletion_rate + config.insertion_rate == pytest.approx(0.2)
        noisy, asr, _ = asr_corpus(corpus, config, seed=5)
        assert asr.wer == pytest.approx(0.2, abs=0.02)
        assert sum(c.conversation.n_tokens for c in noisy) == asr.reference_tokens - asr.deletions + asr.insertions

    def test_transfer_discards_a_minority(self, corpus) -> None:
        """Some spans lose a token to deletion, but fewer than 30% of labels are discarded."""
        noisy, _, transfer = asr_corpus(corpus, AsrNoiseConfig(), seed=5)
        assert transfer.discarded > 0
        assert transfer.discard_rate < 0.3
        kept = sum(len(c.labels(name)) for c in noisy for name in c.annotators)
        assert kept == transfer.transferred
