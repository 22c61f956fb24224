"""Span-attribute tagging.

A three-tag CRF finds generic symptom spans over the encoder output; each span
is pooled and classified by two independent softmax heads, one over symptom
names and one over statuses. During training the heads see gold span locations
with probability ``p`` and Viterbi spans otherwise, ``p`` following a
curriculum schedule.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from typing import Any

import numpy as np

from sxextract.core import CurriculumSchedule, Pooling, SatConfig
from sxextract.core.errors import ShapeError
from sxextract.extractors.base import Encoder, Example, Extractor, unit_span_to_label
from sxextract.extractors.crf import SPAN_TAGS, CrfParams, crf_nll, spans_to_tags, tags_to_spans, viterbi_decode
from sxextract.extractors.vocab import InputUnit, UnitSpan, Vocab, turn_units, unit_spans
from sxextract.models import STATUSES, AnnotatedConversation, Conversation, MentionSet, Ontology, SpanLabel, Status
from sxextract.nn import value as F
from sxextract.nn.layers import FeedForward, Linear
from sxextract.nn.value import Value, no_grad

__all__ = [
    "SatModel",
    "pool_span",
    "classify_span",
    "match_spans",
    "sat_loss",
    "curriculum_p",
]


def curriculum_p(step: int, schedule: CurriculumSchedule) -> float:
    """Probability of feeding gold span locations at ``step``.

    Starts at ``p_start``, never increases, and equals ``p_end`` from
    ``decay_steps`` on.
    """
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    start, end, decay = schedule.p_start, schedule.p_end, schedule.decay_steps
    if step >= decay:
        return end
    if schedule.shape == "linear":
        return start - (start - end) * (step / decay)
    if schedule.shape == "exponential":
        return max(end, end + (start - end) * math.exp(-3.0 * step / decay))
    # inverse sigmoid, rescaled so the schedule starts exactly at p_start
    k = decay / 10.0
    s0 = k / (k + 1.0)
    s = k / (k + math.exp(step / k))
    return end + (start - end) * s / s0


def pool_span(
    h: Value,
    start: int,
    end: int,
    pooling: Pooling = "mean",
    states: Value | None = None,
) -> Value:
    """Aggregate positions ``[start, end)``.

    ``final_state`` concatenates the forward half of ``states`` at ``end - 1``
    with its backward half at ``start``.
    """
    if not 0 <= start < end <= h.shape[0]:
        raise ShapeError("pool_span", (start, end), h.shape, detail="invalid span")
    if pooling == "mean":
        return F.mean(h[start:end], axis=0)
    if pooling == "sum":
        return F.sum(h[start:end], axis=0)
    if states is None:
        raise ShapeError("pool_span", h.shape, detail="final_state pooling needs the BiLSTM states")
    half = states.shape[1] // 2
    return F.concat([states[end - 1, :half], states[start, half:]])


def classify_span(model: SatModel, span_repr: Value) -> tuple[Value, Value]:
    """Symptom and status distributions of one pooled span."""
    return F.softmax(model.symptom_head(span_repr)), F.softmax(model.status_head(span_repr))


def match_spans(
    predicted: Sequence[tuple[int, int]], gold: Sequence[UnitSpan]
) -> list[tuple[tuple[int, int], UnitSpan]]:
    """Greedy one-to-one matching by largest token overlap; ties go to earlier spans."""
    candidates = []
    for pi, (ps, pe) in enumerate(predicted):
        for gi, g in enumerate(gold):
            overlap = min(pe, g.end) - max(ps, g.start)
            if overlap > 0:
                candidates.append((-overlap, ps, g.start, pi, gi))
    candidates.sort()
    used_pred: set[int] = set()
    used_gold: set[int] = set()
    pairs = []
    for _, _, _, pi, gi in candidates:
        if pi in used_pred or gi in used_gold:
            continue
        used_pred.add(pi)
        used_gold.add(gi)
        pairs.append((tuple(predicted[pi]), gold[gi]))
    pairs.sort(key=lambda pair: pair[0])
    return pairs  # type: ignore[return-value]


def sat_loss(
    ids: Sequence[int],
    gold: Sequence[UnitSpan],
    model: SatModel,
    alpha: float,
    p: float,
    coin: bool | None = None,
) -> Value:
    """``alpha * crf_nll`` plus attribute cross-entropies.

    The CRF term always scores the gold tags. ``coin`` fixes the span source
    (``True`` for gold); otherwise it is drawn with probability ``p``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    h, states = model.encode_ids(ids)
    length = h.shape[0]
    for span in gold:
        if not 0 <= span.start < span.end <= length:
            raise ShapeError("sat_loss", (span.start, span.end), (length,), detail="gold span outside unit")
    gold_tags = spans_to_tags([(s.start, s.end) for s in gold], length)
    loss = alpha * crf_nll(h, gold_tags, model.crf)

    draw = model.draw_coin()
    use_gold = coin if coin is not None else draw < p
    if use_gold:
        pairs = [((s.start, s.end), s) for s in gold]
    else:
        with no_grad():
            tags, _ = viterbi_decode(h, model.crf)
        pairs = match_spans(tags_to_spans(tags), gold)

    for (start, end), target in pairs:
        rep = pool_span(h, start, end, model.config.pooling, states)
        sx_logp = F.log_softmax(model.symptom_head(rep))
        st_logp = F.log_softmax(model.status_head(rep))
        loss = loss - sx_logp[model.ontology.index(target.symptom)] - st_logp[STATUSES.index(Status(target.status))]
    return loss


class SatModel(Extractor):
    """Encoder, feed-forward projection, span CRF and two attribute heads."""

    model_type = "sat"
    uses_curriculum = True

    def __init__(self, config: SatConfig, vocab: Vocab, ontology: Ontology, seed: int = 0) -> None:
        config.validate()
        super().__init__(vocab, ontology, seed, config.weight_noise_std)
        self._config = config
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
        self.crf = CrfParams(SPAN_TAGS, config.ff_dim, rng, dtype)
        span_dim = self.encoder.output_dim if config.pooling == "final_state" else config.ff_dim
        self.symptom_head = Linear(span_dim, len(ontology), rng, self._noise, dtype=dtype)
        self.status_head = Linear(span_dim, len(STATUSES), rng, self._noise, dtype=dtype)

    @property
    def config(self) -> SatConfig:
        return self._config

    def units(self, conversation: Conversation) -> list[InputUnit]:
        size = self._config.window_turns if self._config.input_unit == "window" else 1
        return turn_units(conversation, size)

    def encode_ids(self, ids: Sequence[int]) -> tuple[Value, Value]:
        """``(h'', h')``: the projected sequence and the raw BiLSTM states."""
        if not len(ids):
            raise ShapeError("encode", (0,), detail="empty input")
        states = self.encoder(ids)
        return self.projection(states), states

    def encode(self, tokens: Sequence[str]) -> Value:
        return self.encode_ids(self._vocab.encode(tokens))[0]

    def training_examples(
        self, corpus: Sequence[AnnotatedConversation], annotator: str | None = None
    ) -> list[Example]:
        examples = []
        for item in corpus:
            labels = item.labels(annotator)
            for unit in self.units(item.conversation):
                ids = tuple(self._vocab.encode(unit.tokens))
                examples.append(Example(unit.id, ids, tuple(unit_spans(unit, labels))))
        return examples

    def example_loss(self, example: Example, p: float = 1.0) -> Value:
        return sat_loss(example.ids, example.target, self, self._config.alpha, p)

    def predict_labels(self, conversation: Conversation) -> list[SpanLabel]:
        labels = []
        with self.inference():
            for unit in self.units(conversation):
                h, states = self.encode_ids(self._vocab.encode(unit.tokens))
                tags, _ = viterbi_decode(h, self.crf)
                for start, end in tags_to_spans(tags):
                    rep = pool_span(h, start, end, self._config.pooling, states)
                    symptom = self._ontology.symptoms[int(np.argmax(self.symptom_head(rep).data))]
                    status = STATUSES[int(np.argmax(self.status_head(rep).data))]
                    label = unit_span_to_label(unit, start, end, symptom, status)
                    if label is not None:
                        labels.append(label)
        return labels

    def infer_conversation(self, conversation: Conversation) -> MentionSet:
        """Mention counts are the number of extracted spans per key."""
        return MentionSet.from_labels(self.predict_labels(conversation))
