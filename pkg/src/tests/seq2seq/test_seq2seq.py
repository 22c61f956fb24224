"""Tests for the windowed encoder-decoder extractor."""

import dataclasses

import numpy as np
import pytest

from sxextract.core.errors import ShapeError, TagError
from sxextract.extractors.seq2seq import (
    Seq2SeqModel,
    TargetVocab,
    aggregate_windows,
    beam_decode,
    greedy_decode,
    highlighted_tokens,
    make_training_pairs,
    make_windows,
    seq2seq_loss,
)
from sxextract.extractors.vocab import Vocab, join_turns
from sxextract.models import Conversation, MentionSet, SpanLabel, Speaker, Status, Turn
from sxextract.nn.gradcheck import grad_check

PAIN = ("pain", "experienced")
COUGH = ("cough", "not_experienced")


def _conversation(n_turns: int) -> Conversation:
    speakers = (Speaker.DR, Speaker.PT)
    return Conversation("w", tuple(Turn(speakers[i % 2], (f"word{i}",)) for i in range(n_turns)))


@pytest.fixture()
def s2s_model(testing_config, clinic_conversation, clinic_ontology) -> Seq2SeqModel:
    return Seq2SeqModel(testing_config.seq2seq, Vocab.build([clinic_conversation.conversation]), clinic_ontology)


class TestTargetVocab:
    """Decoder token space and grammar."""

    targets = TargetVocab(["pain", "cough"])

    def test_layout(self) -> None:
        """go, eos, symptoms, then statuses."""
        assert self.targets.tokens == ["<go>", "<eos>", "pain", "cough", "experienced", "not_experienced", "other"]

    def test_allowed_alternates(self) -> None:
        """Even positions take a symptom or eos; odd positions a status."""
        assert list(np.flatnonzero(self.targets.allowed(0))) == [1, 2, 3]
        assert list(np.flatnonzero(self.targets.allowed(1))) == [4, 5, 6]
        assert list(np.flatnonzero(self.targets.allowed(4))) == [1, 2, 3]

    def test_encode_and_decode_pairs(self) -> None:
        """Pairs encode to alternating tokens closed by eos."""
        ids = self.targets.encode_pairs([PAIN, COUGH])
        assert ids == [2, 4, 3, 5, 1]
        assert self.targets.decode_pairs(ids) == [PAIN, COUGH]

    def test_decode_drops_incomplete_pair(self) -> None:
        """A dangling symptom without status is ignored."""
        assert self.targets.decode_pairs([2, 4, 3]) == [PAIN]

    def test_unknown_symptom(self) -> None:
        """Targets must come from the ontology."""
        with pytest.raises(TagError, match="fever"):
            self.targets.encode_pairs([("fever", "experienced")])


class TestWindows:
    """Sliding windows over turns."""

    def test_seven_turns_five_wide(self) -> None:
        """T=7, k=5 gives three windows."""
        assert [w.turns for w in make_windows(_conversation(7), 5)] == [range(0, 5), range(1, 6), range(2, 7)]

    def test_short_conversation(self) -> None:
        """A conversation shorter than k is one window."""
        assert [w.turns for w in make_windows(_conversation(3), 5)] == [range(0, 3)]

    @pytest.mark.parametrize("seed", range(5))
    def test_every_turn_is_covered(self, seed: int) -> None:
        """Windows cover every turn and end on the last one."""
        rng = np.random.default_rng(seed)
        for _ in range(20):
            n = int(rng.integers(1, 15))
            k = int(rng.integers(1, 7))
            stride = int(rng.integers(1, k + 1))
            windows = make_windows(_conversation(n), k, stride)
            covered = set().union(*(set(w.turns) for w in windows))
            assert covered == set(range(n))
            assert windows[-1].turns.stop == n

    def test_invalid_size(self) -> None:
        """Window size and stride are positive."""
        with pytest.raises(ValueError):
            make_windows(_conversation(3), 0)

    def test_training_pairs(self, clinic_conversation) -> None:
        """Pairs follow first occurrence and repeat only once."""
        targets = TargetVocab(["pain", "cough"])
        labels = [
            SpanLabel(1, 3, 4, "cough", Status.EXPERIENCED),
            SpanLabel(0, 1, 2, "cough", Status.NOT_EXPERIENCED),
            SpanLabel(1, 2, 3, "cough", Status.NOT_EXPERIENCED),
        ]
        window = join_turns(clinic_conversation.conversation, range(0, 2))
        tokens, target = make_training_pairs(window, labels, targets)
        assert tokens == window.tokens
        assert target == [3, 5, 3, 4, 1]

    def test_no_labels(self, clinic_conversation) -> None:
        """A window without labels targets eos alone."""
        window = join_turns(clinic_conversation.conversation, range(0, 1))
        assert make_training_pairs(window, [], TargetVocab(["cough"]))[1] == [1]


class TestAggregation:
    """Merging window predictions."""

    ranges = [range(i, i + 5) for i in range(7)]

    def test_consecutive_run_counts_once(self) -> None:
        """A key in windows 2, 3 and 4 is one mention."""
        decodes = [[] for _ in self.ranges]
        for i in (2, 3, 4):
            decodes[i] = [PAIN]
        assert aggregate_windows(decodes, self.ranges) == MentionSet({PAIN: 1})

    def test_separate_runs_count_twice(self) -> None:
        """A key in windows 1 and 5 is two mentions."""
        decodes = [[] for _ in self.ranges]
        decodes[1] = [PAIN]
        decodes[5] = [PAIN, COUGH]
        assert aggregate_windows(decodes, self.ranges) == MentionSet({PAIN: 2, COUGH: 1})

    def test_single_window_dedups(self) -> None:
        """Within one window a key counts once."""
        assert aggregate_windows([[PAIN, PAIN, COUGH]], [range(0, 3)]) == MentionSet({PAIN: 1, COUGH: 1})

    def test_length_mismatch(self) -> None:
        """One range per decode."""
        with pytest.raises(ShapeError):
            aggregate_windows([[PAIN]], [])

    def test_highlighted_tokens(self) -> None:
        """Tokens reaching the threshold at any step are kept in order."""
        attention = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
        assert highlighted_tokens(attention, ["a", "b", "c"], 0.5) == ["a", "c"]
        assert highlighted_tokens(np.zeros((0, 3)), ["a", "b", "c"], 0.5) == []


class TestDecoding:
    """Teacher forcing, beam search and greedy decoding."""

    def test_eos_only_target(self, s2s_model) -> None:
        """A lone eos target is a single cross-entropy term."""
        ids = s2s_model.vocab.encode(["any", "cough"])
        loss, rows = s2s_model.teacher_forced(ids, [1])
        assert len(rows) == 1
        assert loss.item() > 0.0
        np.testing.assert_allclose(rows[0].sum(), 1.0, atol=1e-9)

    def test_invalid_target_token(self, s2s_model) -> None:
        """Target ids must be real decoder tokens."""
        with pytest.raises(TagError):
            s2s_model.teacher_forced([1, 2], [0])

    def test_gradients(self, s2s_model, clinic_conversation) -> None:
        """The teacher-forced loss passes the finite-difference check."""
        (example,) = s2s_model.training_examples([clinic_conversation])
        report = grad_check(
            lambda: seq2seq_loss(example.ids, example.target, s2s_model), s2s_model.parameters(), samples_per_param=4
        )
        assert report.passed, report.failures

    @pytest.mark.parametrize("seed", range(8))
    def test_width_one_beam_is_greedy(self, seed, testing_config, clinic_conversation, clinic_ontology) -> None:
        """Beam search of width 1 reproduces greedy decoding."""
        vocab = Vocab.build([clinic_conversation.conversation])
        model = Seq2SeqModel(testing_config.seq2seq, vocab, clinic_ontology, seed=seed)
        ids = np.random.default_rng(seed).integers(0, len(vocab), size=6).tolist()
        beam = beam_decode(ids, model, 1, 8)
        greedy = greedy_decode(ids, model, 8)
        assert beam.tokens == greedy.tokens
        assert beam.log_prob == pytest.approx(greedy.log_prob)

    @pytest.mark.parametrize("seed", range(4))
    def test_decodes_follow_grammar(self, seed, testing_config, clinic_conversation, clinic_ontology) -> None:
        """Outputs parse as (symptom, status) pairs closed by eos, with proper attention rows."""
        config = dataclasses.replace(testing_config.seq2seq, max_decode_len=7)
        model = Seq2SeqModel(config, Vocab.build([clinic_conversation.conversation]), clinic_ontology, seed=seed)
        targets = model.targets
        for window, result in model.decode_windows(clinic_conversation.conversation):
            assert result.tokens[-1] == targets.eos
            body = result.tokens[:-1]
            assert len(body) % 2 == 0
            assert all(targets.symptom_mask[t] for t in body[0::2])
            assert all(targets.status_mask[t] for t in body[1::2])
            np.testing.assert_allclose(result.attention.sum(axis=1), 1.0, atol=1e-9)
            assert result.attention.shape[1] == len(window.tokens)

    def test_inference_keys(self, s2s_model, clinic_conversation, clinic_ontology) -> None:
        """Predicted keys stay within the ontology."""
        keys = s2s_model.infer_conversation(clinic_conversation.conversation).keys()
        assert keys <= set(clinic_ontology.keys())

    def test_zero_length_decodes_agree(self, s2s_model) -> None:
        """With no decode steps both searches return a bare eos and no attention rows."""
        ids = s2s_model.vocab.encode(["any", "cough"])
        greedy = greedy_decode(ids, s2s_model, 0)
        beam = beam_decode(ids, s2s_model, 3, 0)
        assert greedy.tokens == beam.tokens == [s2s_model.targets.eos]
        assert greedy.attention.shape == (0, len(ids))
        assert greedy.log_prob == beam.log_prob == 0.0

    @pytest.mark.parametrize("seed", range(4))
    def test_wide_beam_scores_at_least_gold(self, seed, testing_config, clinic_conversation, clinic_ontology) -> None:
        """A beam wide enough to keep every three-token sequence never scores below the gold target."""
        vocab = Vocab.build([clinic_conversation.conversation])
        model = Seq2SeqModel(testing_config.seq2seq, vocab, clinic_ontology, seed=seed)
        (example,) = model.training_examples([clinic_conversation])
        assert len(example.target) == 3
        with model.inference():
            gold = -seq2seq_loss(example.ids, example.target, model).item() / len(example.target)
        best = beam_decode(example.ids, model, 100, len(example.target))
        assert best.score >= gold - 1e-9
