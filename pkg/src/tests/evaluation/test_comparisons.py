"""Directional comparisons between extractors on a generated held-out split."""

import dataclasses

import pytest

from sxextract.core import AsrNoiseConfig, get_preset
from sxextract.services.corpus import asr_corpus, build_ontology, generate_corpus
from sxextract.services.evaluation import evaluate_asr, evaluate_model, paired_comparison, predict_corpus
from sxextract.services.training import train_model

pytestmark = [pytest.mark.slow, pytest.mark.integration]

MODES = ("single", "voted", "any")


def _f1(report) -> float:
    return report.cell("unweighted", "sx_status").f1


@pytest.fixture(scope="module")
def held_out():
    """Sixty cross-product labels, 80 single-annotator training and 60 triple-annotated test conversations."""
    config = get_preset("testing")
    generator = dataclasses.replace(
        config.generator, n_symptoms=20, n_systems=5, min_turns=4, max_turns=7, negation_rate=0.35
    )
    sat = dataclasses.replace(config.sat, word_emb_dim=16, lstm_hidden=16, ff_dim=16, epochs=25)
    config = dataclasses.replace(config, generator=generator, sat=sat)
    ontology = build_ontology(generator)
    train = generate_corpus(generator, 21, ontology, n_annotators=1, n_conversations=80, prefix="train", stream=0)
    test = generate_corpus(generator, 21, ontology, n_annotators=3, n_conversations=60, prefix="test", stream=2)
    models = {
        name: train_model(name, train, ontology, config, seed=0).model for name in ("sat", "baseline_crossproduct")
    }
    return models, test, (train, ontology, config)


@pytest.fixture(scope="module")
def reports(held_out):
    models, test, _ = held_out
    return {name: evaluate_model(model, test, MODES, seed=0) for name, model in models.items()}


class TestModelComparison:
    """Factored status prediction against the symptom-by-status tag baseline."""

    def test_span_attribute_tagger_beats_baseline(self, reports) -> None:
        """The tagger gains at least 0.02 F1 and the per-conversation gap is significant."""
        sat, baseline = reports["sat"]["voted"], reports["baseline_crossproduct"]["voted"]
        assert _f1(sat) >= _f1(baseline) + 0.02
        comparison = paired_comparison(sat, baseline)
        assert comparison.mean_a > comparison.mean_b
        assert comparison.p_value < 0.05
        assert comparison.n_conversations == 60


class TestReferenceModes:
    """Ordering of the single, voted and any references."""

    @pytest.mark.parametrize("name", ["sat", "baseline_crossproduct"])
    def test_any_at_least_voted_at_least_single(self, name: str, reports) -> None:
        """Any-mode credit dominates voted; voted is not meaningfully below one annotator."""
        by_mode = {mode: _f1(report) for mode, report in reports[name].items()}
        assert by_mode["any"] >= by_mode["voted"]
        assert by_mode["voted"] >= by_mode["single"] - 0.05


class TestProjection:
    """Body-system projection."""

    @pytest.mark.parametrize("name", ["sat", "baseline_crossproduct"])
    def test_projected_at_least_unprojected(self, name: str, held_out) -> None:
        """Collapsing sibling symptoms never costs F1 on the held-out split."""
        models, test, _ = held_out
        preds = predict_corpus(models[name], test)
        plain = evaluate_model(models[name], test, ("voted",), preds=preds)["voted"]
        projected = evaluate_model(models[name], test, ("voted",), project=True, preds=preds)["voted"]
        assert projected.projected and not plain.projected
        assert _f1(projected) >= _f1(plain)


class TestRecognizerTranscripts:
    """Manual-trained models read simulated recognizer output."""

    def test_noisy_transcripts_score_no_higher(self, held_out, reports) -> None:
        """F1 on 20% WER transcripts does not exceed F1 on the manual ones."""
        models, test, _ = held_out
        noisy, asr, transfer = evaluate_asr(models["sat"], test, AsrNoiseConfig(), seed=3)
        assert asr.wer > 0.1
        assert transfer.discarded < transfer.transferred
        assert _f1(noisy["voted"]) <= _f1(reports["sat"]["voted"])

    def test_recognizer_trained_scores_no_higher(self, held_out, reports) -> None:
        """Training and testing on noisy transcripts stays at or below the manual pipeline."""
        _, test, (train, ontology, config) = held_out
        noisy_train, _, _ = asr_corpus(train, AsrNoiseConfig(), seed=3)
        model = train_model("sat", noisy_train, ontology, config, seed=0).model
        noisy, _, _ = evaluate_asr(model, test, AsrNoiseConfig(), seed=4)
        assert _f1(noisy["voted"]) <= _f1(reports["sat"]["voted"])
