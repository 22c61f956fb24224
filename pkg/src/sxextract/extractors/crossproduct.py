"""Cross-product tagging baselines.

Both baselines tag tokens with BIO tags over the product of a name space and
the statuses. ``baseline_crossproduct`` uses symptom names and a per-token
softmax (a CRF over that many tags is impractical); ``baseline_bodysystem``
uses body systems and a CRF output layer, and its predictions are keyed by
body system.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any, ClassVar

import numpy as np

from sxextract.core import SatConfig
from sxextract.extractors.base import Encoder, Example, Extractor, KeySpace, unit_span_to_label
from sxextract.extractors.crf import (
    CrfParams,
    TagSet,
    bio_tagset,
    crf_nll,
    labeled_spans_to_tags,
    labeled_tags_to_spans,
    viterbi_decode,
)
from sxextract.extractors.vocab import InputUnit, UnitSpan, Vocab, turn_units, unit_spans
from sxextract.models import STATUSES, AnnotatedConversation, Conversation, MentionSet, Ontology, SpanLabel, Status
from sxextract.nn import value as F
from sxextract.nn.layers import FeedForward, Linear
from sxextract.nn.value import Value

__all__ = ["CrossProductTagger", "BodySystemTagger", "crossproduct_tag_count"]


def crossproduct_tag_count(n_names: int, n_statuses: int = len(STATUSES)) -> int:
    return 2 * n_names * n_statuses + 1


class _ProductTagger(Extractor):
    """Encoder and projection shared by both baselines, plus the tag bookkeeping."""

    use_crf: ClassVar[bool] = False

    def __init__(self, config: SatConfig, vocab: Vocab, ontology: Ontology, seed: int = 0) -> None:
        config.validate()
        super().__init__(vocab, ontology, seed, config.weight_noise_std)
        self._config = config
        self._keys = [(name, str(status)) for name in self._names() for status in STATUSES]
        self._key_index = {key: i for i, key in enumerate(self._keys)}
        self._tagset = bio_tagset([f"{name}|{status}" for name, status in self._keys])
        dtype: Any = np.dtype(config.dtype)
        rng = self._init_rng
        self.encoder = Encoder(
            len(vocab),
            config.word_emb_dim,
            config.lstm_hidden,
            config.enc_layers,
            config.dropout,
            rng,
            self._dropout_rng,
            self._noise,
            dtype,
        )
        self.projection = FeedForward(self.encoder.output_dim, config.ff_dim, rng, self._noise, dtype)
        if self.use_crf:
            self.crf = CrfParams(self._tagset, config.ff_dim, rng, dtype)
        else:
            self.output = Linear(config.ff_dim, self._tagset.size, rng, self._noise, dtype=dtype)

    def _names(self) -> Sequence[str]:
        raise NotImplementedError

    def _name_of(self, symptom: str) -> str:
        raise NotImplementedError

    @property
    def config(self) -> SatConfig:
        return self._config

    @property
    def tagset(self) -> TagSet:
        return self._tagset

    def units(self, conversation: Conversation) -> list[InputUnit]:
        size = self._config.window_turns if self._config.input_unit == "window" else 1
        return turn_units(conversation, size)

    def gold_tags(self, spans: Sequence[UnitSpan], length: int) -> list[int]:
        labeled = [(s.start, s.end, self._key_index[(self._name_of(s.symptom), str(s.status))]) for s in spans]
        return labeled_spans_to_tags(labeled, length, self._tagset)

    def features(self, ids: Sequence[int]) -> Value:
        return self.projection(self.encoder(ids))

    def training_examples(
        self, corpus: Sequence[AnnotatedConversation], annotator: str | None = None
    ) -> list[Example]:
        examples = []
        for item in corpus:
            labels = item.labels(annotator)
            for unit in self.units(item.conversation):
                tags = self.gold_tags(unit_spans(unit, labels), len(unit.tokens))
                examples.append(Example(unit.id, tuple(self._vocab.encode(unit.tokens)), tuple(tags)))
        return examples

    def example_loss(self, example: Example, p: float = 1.0) -> Value:
        h = self.features(example.ids)
        if self.use_crf:
            return crf_nll(h, example.target, self.crf)
        log_probs = F.log_softmax(self.output(h), axis=-1)
        picked = F.take(log_probs, (np.arange(len(example.target)), np.asarray(example.target)))
        return -F.sum(picked)

    def decode(self, ids: Sequence[int]) -> list[int]:
        h = self.features(ids)
        if self.use_crf:
            return viterbi_decode(h, self.crf)[0]
        return [int(i) for i in np.argmax(self.output(h).data, axis=-1)]

    def predict_labels(self, conversation: Conversation) -> list[SpanLabel]:
        """Predicted spans; for the body-system tagger ``symptom`` holds the body system."""
        labels = []
        with self.inference():
            for unit in self.units(conversation):
                tags = self.decode(self._vocab.encode(unit.tokens))
                for start, end, key_index in labeled_tags_to_spans(tags, self._tagset):
                    name, status = self._keys[key_index]
                    label = unit_span_to_label(unit, start, end, name, Status(status))
                    if label is not None:
                        labels.append(label)
        return labels

    def infer_conversation(self, conversation: Conversation) -> MentionSet:
        return MentionSet.from_labels(self.predict_labels(conversation))


class CrossProductTagger(_ProductTagger):
    """Per-token softmax over ``2 * |symptoms| * |statuses| + 1`` tags, greedy decoding."""

    model_type = "baseline_crossproduct"
    key_space: ClassVar[KeySpace] = "symptom"
    use_crf = False

    def _names(self) -> Sequence[str]:
        return self._ontology.symptoms

    def _name_of(self, symptom: str) -> str:
        return symptom


class BodySystemTagger(_ProductTagger):
    """CRF over ``2 * |body systems| * |statuses| + 1`` tags."""

    model_type = "baseline_bodysystem"
    key_space: ClassVar[KeySpace] = "body_system"
    use_crf = True

    def _names(self) -> Sequence[str]:
        return self._ontology.body_systems

    def _name_of(self, symptom: str) -> str:
        return self._ontology.body_system(symptom)
