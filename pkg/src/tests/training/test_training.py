"""Tests for the epoch loop, extractor training and encoder pre-training."""

import dataclasses
import json

import numpy as np
import pytest

from sxextract.core import CurriculumSchedule
from sxextract.core.errors import CheckpointError, NumericalError, SxError
from sxextract.extractors import (
    adopt_encoder,
    build_extractor,
    load_extractor,
    load_pretrained_encoder,
    next_turn_examples,
)
from sxextract.extractors.span_attribute import SatModel
from sxextract.extractors.vocab import Vocab
from sxextract.services.corpus import generate_corpus
from sxextract.services.evaluation import evaluate_model
from sxextract.services.training import (
    effective_schedule,
    encoder_config,
    pretrain_encoder,
    run_epochs,
    train_model,
    write_training_log,
)


@pytest.fixture()
def clinic_model(testing_config, clinic_conversation, clinic_ontology) -> SatModel:
    return SatModel(testing_config.sat, Vocab.build([clinic_conversation.conversation]), clinic_ontology, seed=0)


def _with(config, section: str, **changes):
    return dataclasses.replace(config, **{section: dataclasses.replace(getattr(config, section), **changes)})


def _task_loss(model, examples) -> float:
    with model.inference():
        return sum(model.example_loss(example, 1.0).item() for example in examples) / len(examples)


class TestRunEpochs:
    """The shared epoch loop."""

    def test_loss_decreases(self, clinic_model, clinic_conversation) -> None:
        """Five epochs on one conversation lower the loss."""
        examples = clinic_model.training_examples([clinic_conversation])
        result = run_epochs(clinic_model, examples, epochs=5, batch_size=2, learning_rate=0.05)
        assert [r.epoch for r in result.log] == [0, 1, 2, 3, 4, 5]
        assert result.log[0].step == 0 and result.log[-1].step == 5
        assert result.log[-1].loss < result.log[0].loss
        assert result.best_epoch == 5
        assert not clinic_model.training

    def test_loss_falls_over_fifty_steps(self, clinic_model, clinic_conversation) -> None:
        """Fifty full-batch updates at least halve the training NLL."""
        examples = clinic_model.training_examples([clinic_conversation])
        before = _task_loss(clinic_model, examples)
        result = run_epochs(clinic_model, examples, epochs=50, batch_size=len(examples), learning_rate=0.05)
        assert result.log[-1].step == 50
        after = _task_loss(clinic_model, examples)
        assert result.log[0].loss == pytest.approx(before)
        assert after < 0.5 * before
        losses = [r.loss for r in result.log[1:]]
        assert sum(losses[-5:]) < sum(losses[:5])

    def test_schedule_drives_p(self, clinic_model, clinic_conversation) -> None:
        """The logged p follows the curriculum."""
        examples = clinic_model.training_examples([clinic_conversation])
        schedule = CurriculumSchedule(p_start=1.0, p_end=0.0, decay_steps=4)
        result = run_epochs(clinic_model, examples, 2, 1, 0.01, schedule=schedule)
        assert [r.p for r in result.log] == [1.0, 0.75, 0.25]

    def test_best_epoch_is_restored(self, clinic_model, clinic_conversation) -> None:
        """Parameters of the best dev epoch are kept; ties keep the earlier epoch."""
        examples = clinic_model.training_examples([clinic_conversation])
        scores = iter([0.2, 0.5, 0.5, 0.1])
        snapshots = []

        def dev_score() -> float:
            snapshots.append(clinic_model.crf.transitions.data.copy())
            return next(scores)

        result = run_epochs(clinic_model, examples, 3, 2, 0.05, dev_score=dev_score)
        assert result.best_epoch == 1
        assert result.best_dev_f1 == 0.5
        np.testing.assert_array_equal(clinic_model.crf.transitions.data, snapshots[1])

    def test_no_examples(self, clinic_model) -> None:
        """An empty training set is an error."""
        with pytest.raises(SxError, match="no training examples"):
            run_epochs(clinic_model, [], 1, 1, 0.01)

    def test_non_finite_loss(self, clinic_model, clinic_conversation) -> None:
        """A NaN loss aborts with the step and unit."""
        examples = clinic_model.training_examples([clinic_conversation])
        clinic_model.symptom_head.weight.data[:] = np.nan
        with pytest.raises(NumericalError, match="step 0 on unit clinic-1") as info:
            run_epochs(clinic_model, examples[1:], 1, 1, 0.01)
        assert info.value.unit_id == "clinic-1:1-2"

    def test_effective_schedule(self, testing_config) -> None:
        """curriculum_epochs ties the decay to the epoch length."""
        sat = dataclasses.replace(testing_config.sat, curriculum_epochs=2)
        assert effective_schedule(sat, 5).decay_steps == 10
        assert effective_schedule(testing_config.sat, 5) == testing_config.sat.curriculum


class TestTrainModel:
    """End-to-end training of extractors."""

    def test_reproducible(self, tiny_corpus, tiny_ontology, testing_config) -> None:
        """Equal seeds give equal logs and parameters."""
        first = train_model("sat", tiny_corpus, tiny_ontology, testing_config, seed=1)
        second = train_model("sat", tiny_corpus, tiny_ontology, testing_config, seed=1)
        assert first.log == second.log
        for name, param in first.model.parameters().items():
            np.testing.assert_array_equal(param.data, second.model.parameters()[name].data)
        assert first.config_hash == second.config_hash

    def test_dev_selection_and_reload(self, tiny_corpus, tiny_ontology, testing_config, tmp_path) -> None:
        """The best dev epoch is reported and a saved model reproduces its predictions."""
        result = train_model(
            "baseline_crossproduct", tiny_corpus[:2], tiny_ontology, testing_config, dev=tiny_corpus[2:]
        )
        dev_scores = [r.dev_f1 for r in result.log]
        assert result.best_dev_f1 == max(dev_scores)
        assert result.best_epoch == dev_scores.index(max(dev_scores))
        path = result.model.save(tmp_path / "model.npz", best_epoch=result.best_epoch)
        reloaded = load_extractor(path)
        for item in tiny_corpus[2:]:
            assert reloaded.infer_conversation(item.conversation) == result.model.infer_conversation(item.conversation)

    @pytest.mark.parametrize("model_type", ["seq2seq", "baseline_bodysystem"])
    def test_other_models_train(self, model_type, tiny_corpus, tiny_ontology, testing_config) -> None:
        """Every model type runs through the loop."""
        config = _with(testing_config, "seq2seq" if model_type == "seq2seq" else "sat", epochs=1)
        result = train_model(model_type, tiny_corpus[:2], tiny_ontology, config)
        assert len(result.log) == 2
        assert all(np.isfinite(r.loss) for r in result.log)

    def test_empty_split(self, tiny_ontology, testing_config) -> None:
        """Training needs data."""
        with pytest.raises(SxError, match="empty"):
            train_model("sat", [], tiny_ontology, testing_config)

    @pytest.mark.slow
    def test_overfits_one_conversation(self, testing_config, clinic_conversation, clinic_ontology) -> None:
        """A saturated model reproduces its training conversation's mentions."""
        config = _with(testing_config, "sat", epochs=100, learning_rate=0.05, alpha=1.0, batch_size=1)
        result = train_model("sat", [clinic_conversation], clinic_ontology, config, seed=0)
        expected = clinic_conversation.mention_sets()["a"]
        assert result.model.infer_conversation(clinic_conversation.conversation) == expected

    @pytest.mark.slow
    @pytest.mark.parametrize(("model_type", "threshold"), [("sat", 0.95), ("seq2seq", 0.90)])
    def test_overfits_small_corpus(self, model_type, threshold, testing_config, tiny_ontology) -> None:
        """With enough capacity and epochs both extractors fit 32 training conversations."""
        generator = dataclasses.replace(testing_config.generator, disagreement_rate=0.0)
        corpus = generate_corpus(generator, 0, tiny_ontology, n_annotators=1, n_conversations=32)
        config = _with(
            testing_config, "sat", word_emb_dim=16, lstm_hidden=16, ff_dim=16, alpha=1.0, epochs=60, batch_size=2
        )
        config = _with(
            config,
            "seq2seq",
            word_emb_dim=16,
            lstm_hidden=24,
            attention_dim=16,
            max_decode_len=16,
            epochs=80,
            batch_size=2,
        )
        result = train_model(model_type, corpus, tiny_ontology, config, seed=0)
        report = evaluate_model(result.model, corpus, ("single",))["single"]
        assert report.cell("unweighted", "sx_status").f1 >= threshold


class TestPretraining:
    """Next-turn pre-training and encoder transfer."""

    def test_next_turn_examples(self, clinic_conversation) -> None:
        """Each context predicts the following turn's words and eos."""
        vocab = Vocab.build([clinic_conversation.conversation])
        (example,) = next_turn_examples([clinic_conversation.conversation], 1, vocab)
        assert example.ids == tuple(vocab.encode(["<DR>", "any", "cough", "?"]))
        assert example.target == (*vocab.encode(["yes", "a", "dry", "cough"]), vocab.eos)

    def test_encoder_config_matches_sat(self, testing_config) -> None:
        """Pre-training for the tagger borrows its encoder sizes."""
        config = _with(testing_config, "sat", lstm_hidden=5)
        assert encoder_config("sat", config).lstm_hidden == 5
        assert encoder_config("seq2seq", config) == config.seq2seq

    def test_pretrained_encoder_transfers(self, tiny_corpus, tiny_ontology, testing_config, tmp_path) -> None:
        """An encoder checkpoint warm-starts a tagger bit-exactly."""
        config = _with(testing_config, "seq2seq", window_k=2, epochs=1)
        conversations = [c.conversation for c in tiny_corpus]
        result = pretrain_encoder(conversations, config, seed=0, target_model="sat")
        assert len(result.log) == 2
        path = result.model.encoder_checkpoint(tmp_path / "encoder.npz")
        sat_config = _with(config, "sat", epochs=1)
        tagger = train_model("sat", tiny_corpus[:1], tiny_ontology, sat_config, pretrained_encoder=path)
        assert tagger.model.vocab.tokens == result.model.vocab.tokens

    def test_dimension_mismatch(self, tiny_corpus, tiny_ontology, testing_config, tmp_path) -> None:
        """Loading into a differently sized encoder names both shapes."""
        config = _with(testing_config, "seq2seq", window_k=2, epochs=1)
        result = pretrain_encoder([c.conversation for c in tiny_corpus], config, target_model="seq2seq")
        path = result.model.encoder_checkpoint(tmp_path / "encoder.npz")
        wider = _with(config, "sat", lstm_hidden=9)
        with pytest.raises(CheckpointError, match="shape mismatch"):
            train_model("sat", tiny_corpus[:1], tiny_ontology, wider, pretrained_encoder=path)

    @pytest.mark.slow
    def test_pretrained_encoder_lowers_task_loss(self, testing_config, tiny_ontology, tmp_path) -> None:
        """After equal fine-tuning budgets a warm-started encoder ends at lower task loss than a random one.

        Both arms share the vocabulary, the decoder initialization and the batch order.
        """
        config = _with(testing_config, "seq2seq", window_k=3, word_emb_dim=12, lstm_hidden=12, epochs=10)
        generator = dataclasses.replace(config.generator, min_turns=5, max_turns=8)
        corpus = generate_corpus(generator, 2, tiny_ontology, n_annotators=1, n_conversations=32)
        pretrained = pretrain_encoder([item.conversation for item in corpus], config, seed=0)
        path = pretrained.model.encoder_checkpoint(tmp_path / "encoder.npz")
        arrays, _, vocab = load_pretrained_encoder(path)
        section = config.seq2seq
        gaps = []
        for seed in range(3):
            cold = build_extractor("seq2seq", config, vocab, tiny_ontology, seed)
            warm = build_extractor("seq2seq", config, vocab, tiny_ontology, seed)
            adopt_encoder(warm, arrays)
            examples = cold.training_examples(corpus)
            for model in (cold, warm):
                run_epochs(model, examples, 2, section.batch_size, section.learning_rate, seed=seed)
            gaps.append(_task_loss(cold, examples) - _task_loss(warm, examples))
        assert sum(gaps) > 0.0

    def test_conversations_too_short(self, testing_config, clinic_conversation) -> None:
        """Contexts longer than every conversation leave nothing to learn."""
        with pytest.raises(SxError, match="long enough"):
            pretrain_encoder([clinic_conversation.conversation], testing_config)


class TestTrainingLog:
    """Log files."""

    def test_log_lines(self, clinic_model, clinic_conversation, tmp_path) -> None:
        """One JSON record per epoch without timestamps."""
        result = run_epochs(clinic_model, clinic_model.training_examples([clinic_conversation]), 1, 2, 0.01)
        path = tmp_path / "training_log.jsonl"
        write_training_log(path, result.log)
        records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        assert [sorted(r) for r in records] == [["dev_f1", "epoch", "loss", "p", "step"]] * 2
