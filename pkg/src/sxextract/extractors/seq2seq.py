"""Sliding-window sequence-to-sequence extraction.

Windows of ``k`` consecutive turns are encoded by the shared BiLSTM encoder; an
LSTM decoder with additive attention emits ``symptom, status, symptom, status,
..., <eos>``. Symptom positions may only produce symptom tokens or ``<eos>``,
status positions only status tokens. Window predictions are merged into one
mention set per conversation.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from sxextract.core import Seq2SeqConfig
from sxextract.core.errors import ShapeError, TagError
from sxextract.extractors.base import Encoder, Example, Extractor
from sxextract.extractors.crf import FORBIDDEN
from sxextract.extractors.vocab import InputUnit, Vocab, join_turns
from sxextract.models import STATUSES, AnnotatedConversation, Conversation, MentionSet, Ontology, SpanLabel
from sxextract.nn import value as F
from sxextract.nn.layers import LSTM, Embedding, Linear, Module, WeightNoise, lstm_cell, uniform_init
from sxextract.nn.value import Value

__all__ = [
    "TargetVocab",
    "AttentionDecoder",
    "DecoderState",
    "DecodeResult",
    "Seq2SeqModel",
    "make_windows",
    "make_training_pairs",
    "seq2seq_loss",
    "beam_decode",
    "greedy_decode",
    "aggregate_windows",
    "highlighted_tokens",
]

GO = "<go>"
END = "<eos>"


class TargetVocab:
    """Decoder tokens: ``<go>``, ``<eos>``, one per symptom, one per status."""

    def __init__(self, symptoms: Sequence[str]) -> None:
        self.symptoms = list(symptoms)
        self.statuses = [str(s) for s in STATUSES]
        self.tokens = [GO, END, *self.symptoms, *self.statuses]
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        self.go = 0
        self.eos = 1
        size = len(self.tokens)
        self.symptom_mask = np.zeros(size, dtype=bool)
        self.symptom_mask[2 : 2 + len(self.symptoms)] = True
        self.status_mask = np.zeros(size, dtype=bool)
        self.status_mask[2 + len(self.symptoms) :] = True
        self._even = self.symptom_mask.copy()
        self._even[self.eos] = True

    def __len__(self) -> int:
        return len(self.tokens)

    def allowed(self, position: int) -> np.ndarray:
        """Tokens permitted at decode ``position`` (0-based)."""
        return self._even if position % 2 == 0 else self.status_mask

    def encode_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[int]:
        ids = []
        for symptom, status in pairs:
            if symptom not in self._ids or not self.symptom_mask[self._ids[symptom]]:
                raise TagError(f"unknown target symptom {symptom!r}")
            if str(status) not in self.statuses:
                raise TagError(f"unknown target status {status!r}")
            ids.extend((self._ids[symptom], self._ids[str(status)]))
        return [*ids, self.eos]

    def decode_pairs(self, ids: Sequence[int]) -> list[tuple[str, str]]:
        """Complete ``(symptom, status)`` pairs before the first ``<eos>``."""
        pairs = []
        body = list(ids)
        if self.eos in body:
            body = body[: body.index(self.eos)]
        for i in range(0, len(body) - 1, 2):
            pairs.append((self.tokens[body[i]], self.tokens[body[i + 1]]))
        return pairs


class DecoderState(NamedTuple):
    h: Value
    c: Value
    memory: Value
    keys: Value


class AttentionDecoder(Module):
    """LSTM decoder with additive attention over encoder states."""

    def __init__(
        self,
        out_size: int,
        emb_dim: int,
        enc_dim: int,
        hidden: int,
        attention_dim: int,
        rng: np.random.Generator,
        noise: WeightNoise | None = None,
        dtype: Any = np.float64,
    ) -> None:
        self.embedding = Embedding(out_size, emb_dim, rng, noise, dtype)
        self.bridge = Linear(enc_dim, hidden, rng, noise, dtype=dtype)
        self.memory_proj = Linear(enc_dim, attention_dim, rng, noise, bias=False, dtype=dtype)
        self.query_proj = Linear(hidden, attention_dim, rng, noise, dtype=dtype)
        self.attention_v = Value(uniform_init(rng, (attention_dim,), 0.1, dtype), requires_grad=True)
        self.cell = LSTM(emb_dim + enc_dim, hidden, rng, noise, dtype)
        self.output = Linear(hidden + enc_dim, out_size, rng, noise, dtype=dtype)

    def start(self, memory: Value) -> DecoderState:
        """Initial state from the last forward and first backward encoder outputs."""
        half = memory.shape[1] // 2
        summary = F.concat([memory[memory.shape[0] - 1, :half], memory[0, half:]])
        h = F.tanh(self.bridge(summary))
        c = Value(np.zeros(h.shape, dtype=h.data.dtype))
        return DecoderState(h, c, memory, self.memory_proj(memory))

    def attend(self, state: DecoderState) -> tuple[Value, Value]:
        """``(weights, context)`` for the current decoder state."""
        energy = F.tanh(state.keys + self.query_proj(state.h))
        weights = F.softmax(F.matmul(energy, self.attention_v))
        return weights, F.matmul(weights, state.memory)

    def step(
        self, state: DecoderState, previous: int, allowed: np.ndarray | None = None
    ) -> tuple[Value, Value, DecoderState]:
        """One decoder step; returns ``(log_probs, attention, next_state)``."""
        weights, context = self.attend(state)
        x = F.concat([self.embedding([previous])[0], context])
        h, c = lstm_cell(x, state.h, state.c, self.cell.weights())
        logits = self.output(F.concat([h, context]))
        if allowed is not None:
            logits = logits + Value(np.where(allowed, 0.0, FORBIDDEN).astype(logits.data.dtype))
        return F.log_softmax(logits), weights, DecoderState(h, c, state.memory, state.keys)


@dataclass
class DecodeResult:
    tokens: list[int]
    attention: np.ndarray
    log_prob: float

    @property
    def score(self) -> float:
        return self.log_prob / max(1, len(self.tokens))


@dataclass
class _Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    state: DecoderState
    attention: tuple[np.ndarray, ...] = field(default_factory=tuple)


def make_windows(conversation: Conversation, k: int, stride: int = 1) -> list[InputUnit]:
    """Windows of ``k`` turns every ``stride`` turns; the last one reaches the final turn."""
    if k < 1 or stride < 1:
        raise ValueError(f"window size and stride must be >= 1, got k={k}, stride={stride}")
    n = len(conversation)
    count = max(1, math.ceil((n - k) / stride) + 1)
    return [join_turns(conversation, range(i * stride, min(i * stride + k, n))) for i in range(count)]


def make_training_pairs(
    window: InputUnit, labels: Sequence[SpanLabel], targets: TargetVocab
) -> tuple[tuple[str, ...], list[int]]:
    """Window tokens and the target sequence of its labels.

    Pairs follow first occurrence and appear once per window.
    """
    inside = sorted(
        (label for label in labels if label.turn in window.turns), key=lambda lab: (lab.turn, lab.start, lab.end)
    )
    pairs = list(dict.fromkeys(label.key for label in inside))
    return window.tokens, targets.encode_pairs(pairs)


def seq2seq_loss(ids: Sequence[int], target: Sequence[int], model: Seq2SeqModel) -> Value:
    """Teacher-forced cross-entropy summed over target steps."""
    return model.teacher_forced(ids, target)[0]


def _ranked_allowed(log_probs: np.ndarray, allowed: np.ndarray, width: int) -> np.ndarray:
    candidates = np.flatnonzero(allowed)
    order = np.argsort(-log_probs[candidates], kind="stable")
    return candidates[order[:width]]


def beam_decode(ids: Sequence[int], model: Seq2SeqModel, beam_width: int, max_len: int) -> DecodeResult:
    """Beam search ranked by length-normalized log-probability.

    A decode that reaches ``max_len`` without ``<eos>`` keeps its complete
    pairs and gets ``<eos>`` appended.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    targets = model.targets
    with model.inference():
        memory = model.encode_ids(ids)
        live = [_Hypothesis((), 0.0, model.decoder.start(memory))]
        finished: list[_Hypothesis] = []
        for position in range(max_len):
            allowed = targets.allowed(position)
            candidates = []
            for hyp in live:
                previous = hyp.tokens[-1] if hyp.tokens else targets.go
                log_probs, weights, state = model.decoder.step(hyp.state, previous, allowed)
                for token in _ranked_allowed(log_probs.data, allowed, beam_width):
                    candidates.append(
                        _Hypothesis(
                            (*hyp.tokens, int(token)),
                            hyp.log_prob + float(log_probs.data[token]),
                            state,
                            (*hyp.attention, weights.data.copy()),
                        )
                    )
            candidates.sort(key=lambda c: -c.log_prob)
            live = []
            for cand in candidates[:beam_width]:
                (finished if cand.tokens[-1] == targets.eos else live).append(cand)
            if not live or len(finished) >= beam_width:
                break
    if finished:
        best = max(finished, key=lambda h: h.log_prob / len(h.tokens))
        tokens, rows = list(best.tokens), list(best.attention)
    else:
        best = live[0]
        keep = len(best.tokens) - len(best.tokens) % 2
        tokens, rows = [*best.tokens[:keep], targets.eos], list(best.attention[:keep])
    attention = np.stack(rows) if rows else np.zeros((0, len(ids)))
    return DecodeResult(tokens, attention, best.log_prob)


def greedy_decode(ids: Sequence[int], model: Seq2SeqModel, max_len: int) -> DecodeResult:
    """Argmax decoding under the same grammar; ties go to the lowest token id."""
    targets = model.targets
    tokens: list[int] = []
    rows = []
    total = 0.0
    with model.inference():
        state = model.decoder.start(model.encode_ids(ids))
        for position in range(max_len):
            allowed = targets.allowed(position)
            previous = tokens[-1] if tokens else targets.go
            log_probs, weights, state = model.decoder.step(state, previous, allowed)
            token = int(_ranked_allowed(log_probs.data, allowed, 1)[0])
            tokens.append(token)
            rows.append(weights.data.copy())
            total += float(log_probs.data[token])
            if token == targets.eos:
                break
    if not tokens or tokens[-1] != targets.eos:
        keep = len(tokens) - len(tokens) % 2
        tokens, rows = [*tokens[:keep], targets.eos], rows[:keep]
    attention = np.stack(rows) if rows else np.zeros((0, len(ids)))
    return DecodeResult(tokens, attention, total)


def aggregate_windows(
    decodes: Sequence[Sequence[tuple[str, str]]], ranges: Sequence[range]
) -> MentionSet:
    """Count each key once per maximal run of consecutive, overlapping windows."""
    if len(decodes) != len(ranges):
        raise ShapeError("aggregate_windows", (len(decodes),), (len(ranges),))
    seen: dict[tuple[str, str], list[int]] = {}
    for index, pairs in enumerate(decodes):
        for key in dict.fromkeys(pairs):
            seen.setdefault(key, []).append(index)
    counts: dict[tuple[str, str], int] = {}
    for key, indices in seen.items():
        runs = 1
        for prev, cur in zip(indices, indices[1:]):
            adjacent = cur == prev + 1 and ranges[cur].start < ranges[prev].stop
            if not adjacent:
                runs += 1
        counts[key] = runs
    return MentionSet(counts)


def highlighted_tokens(attention: np.ndarray, tokens: Sequence[str], threshold: float) -> list[str]:
    """Window tokens receiving at least ``threshold`` attention at any step, in window order."""
    if attention.size == 0:
        return []
    peak = attention.max(axis=0)
    return [tokens[i] for i in np.flatnonzero(peak >= threshold)]


class Seq2SeqModel(Extractor):
    """Shared encoder plus an attention decoder over :class:`TargetVocab`."""

    model_type = "seq2seq"

    def __init__(self, config: Seq2SeqConfig, vocab: Vocab, ontology: Ontology, seed: int = 0) -> None:
        config.validate()
        super().__init__(vocab, ontology, seed, config.weight_noise_std)
        self._config = config
        self._targets = TargetVocab(ontology.symptoms)
        dtype: Any = np.dtype(config.dtype)
        rng = self._init_rng
        self.encoder = Encoder(
            len(vocab),
            config.word_emb_dim,
            config.lstm_hidden,
            config.layers,
            config.dropout,
            rng,
            self._dropout_rng,
            self._noise,
            dtype,
        )
        self.decoder = AttentionDecoder(
            len(self._targets),
            config.word_emb_dim,
            self.encoder.output_dim,
            config.lstm_hidden,
            config.attention_dim,
            rng,
            self._noise,
            dtype,
        )

    @property
    def config(self) -> Seq2SeqConfig:
        return self._config

    @property
    def targets(self) -> TargetVocab:
        return self._targets

    def encode_ids(self, ids: Sequence[int]) -> Value:
        if not len(ids):
            raise ShapeError("encode", (0,), detail="empty input")
        return self.encoder(ids)

    def windows(self, conversation: Conversation) -> list[InputUnit]:
        return make_windows(conversation, self._config.window_k, self._config.window_stride)

    def teacher_forced(self, ids: Sequence[int], target: Sequence[int]) -> tuple[Value, list[np.ndarray]]:
        """``(loss, attention rows)`` with gold previous tokens fed at every step."""
        for token in target:
            if not 0 < token < len(self._targets):
                raise TagError(f"target token {token} outside the {len(self._targets)}-token vocabulary")
        state = self.decoder.start(self.encode_ids(ids))
        previous = self._targets.go
        loss: Value | None = None
        rows = []
        for position, token in enumerate(target):
            log_probs, weights, state = self.decoder.step(state, previous, self._targets.allowed(position))
            rows.append(weights.data.copy())
            term = -log_probs[int(token)]
            loss = term if loss is None else loss + term
            previous = int(token)
        if loss is None:
            raise ShapeError("seq2seq_loss", (0,), detail="empty target")
        return loss, rows

    def training_examples(
        self, corpus: Sequence[AnnotatedConversation], annotator: str | None = None
    ) -> list[Example]:
        examples = []
        for item in corpus:
            labels = item.labels(annotator)
            for window in self.windows(item.conversation):
                tokens, target = make_training_pairs(window, labels, self._targets)
                examples.append(Example(window.id, tuple(self._vocab.encode(tokens)), tuple(target)))
        return examples

    def example_loss(self, example: Example, p: float = 1.0) -> Value:
        return seq2seq_loss(example.ids, example.target, self)

    def decode_windows(self, conversation: Conversation) -> list[tuple[InputUnit, DecodeResult]]:
        results = []
        for window in self.windows(conversation):
            ids = self._vocab.encode(window.tokens)
            results.append((window, beam_decode(ids, self, self._config.beam_width, self._config.max_decode_len)))
        return results

    def infer_conversation(self, conversation: Conversation) -> MentionSet:
        decoded = self.decode_windows(conversation)
        pairs = [self._targets.decode_pairs(result.tokens) for _, result in decoded]
        return aggregate_windows(pairs, [window.turns for window, _ in decoded])

