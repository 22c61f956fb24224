"""Linear-chain CRF over BIO tag sets.

Emissions are dot products ``h_i . y_t`` between encoder states and one learned
embedding per tag; transitions form an ``(E + 2) x (E + 2)`` matrix whose last
two rows/columns are the START and STOP boundary states. Forbidden
transitions (into START, out of STOP) hold a fixed large negative score.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from sxextract.core.errors import ShapeError, TagError
from sxextract.nn import value as F
from sxextract.nn.layers import Module, uniform_init
from sxextract.nn.value import Value

__all__ = [
    "FORBIDDEN",
    "TagSet",
    "SPAN_TAGS",
    "bio_tagset",
    "CrfParams",
    "emissions",
    "sequence_score",
    "log_partition",
    "crf_nll",
    "viterbi_decode",
    "tags_to_spans",
    "spans_to_tags",
    "labeled_tags_to_spans",
    "labeled_spans_to_tags",
]

FORBIDDEN = -1.0e4


@dataclass(frozen=True)
class TagSet:
    """Ordered BIO tags: ``B``/``I`` per label, then a single ``O``."""

    labels: tuple[str, ...]

    @property
    def names(self) -> tuple[str, ...]:
        names = []
        for label in self.labels:
            names.extend((f"{label}_B", f"{label}_I"))
        return (*names, "O")

    @property
    def size(self) -> int:
        return 2 * len(self.labels) + 1

    @property
    def outside(self) -> int:
        return 2 * len(self.labels)

    @property
    def start(self) -> int:
        return self.size

    @property
    def stop(self) -> int:
        return self.size + 1

    def begin(self, label: int) -> int:
        return 2 * label

    def inside(self, label: int) -> int:
        return 2 * label + 1


def bio_tagset(labels: Sequence[str]) -> TagSet:
    return TagSet(tuple(labels))


# sym_B=0, sym_I=1, O=2
SPAN_TAGS = bio_tagset(["sym"])


class CrfParams(Module):
    """Transition matrix ``transitions`` and tag embeddings ``label_embeddings``."""

    def __init__(self, tags: TagSet, dim: int, rng: np.random.Generator, dtype: Any = np.float64) -> None:
        self._tags = tags
        n = tags.size + 2
        transitions = uniform_init(rng, (n, n), 0.1, dtype)
        self.transitions = Value(transitions, requires_grad=True)
        self.label_embeddings = Value(uniform_init(rng, (tags.size, dim), 0.1, dtype), requires_grad=True)
        self.pin_boundaries()

    @property
    def tags(self) -> TagSet:
        return self._tags

    def pin_boundaries(self) -> None:
        a = self.transitions.data
        a[:, self._tags.start] = FORBIDDEN
        a[self._tags.stop, :] = FORBIDDEN

    def after_update(self) -> None:
        self.pin_boundaries()


def _as_matrix(h: Value | Sequence[Value]) -> Value:
    if isinstance(h, Value):
        x = h
    else:
        if not len(h):
            raise ShapeError("crf", (0,), detail="empty sequence")
        x = F.stack(list(h))
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError("crf", x.shape, detail="expected a nonempty (N, d) sequence")
    return x


def emissions(h: Value | Sequence[Value], params: CrfParams) -> Value:
    """``(N, E)`` emission scores ``h_i . y_t``."""
    x = _as_matrix(h)
    if x.shape[1] != params.label_embeddings.shape[1]:
        raise ShapeError("emissions", x.shape, params.label_embeddings.shape)
    return F.matmul(x, params.label_embeddings.T)


def _check_tags(tags: Sequence[int], n: int, tagset: TagSet) -> np.ndarray:
    if len(tags) != n:
        raise ShapeError("sequence_score", (n,), (len(tags),), detail="one tag per position")
    arr = np.asarray(tags, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= tagset.size):
        raise TagError(f"tag outside the {tagset.size}-tag set: {list(tags)}")
    return arr


def sequence_score(h: Value | Sequence[Value], tags: Sequence[int], params: CrfParams) -> Value:
    """Transition plus emission score of one tag sequence, START/STOP included."""
    em = emissions(h, params)
    n = em.shape[0]
    arr = _check_tags(tags, n, params.tags)
    emitted = F.sum(F.take(em, (np.arange(n), arr)))
    prev = np.concatenate([[params.tags.start], arr])
    nxt = np.concatenate([arr, [params.tags.stop]])
    moved = F.sum(F.take(params.transitions, (prev, nxt)))
    return emitted + moved


def log_partition(h: Value | Sequence[Value], params: CrfParams) -> Value:
    """Log-sum-exp of the scores of every tag sequence (forward algorithm)."""
    em = emissions(h, params)
    tags = params.tags
    size = tags.size
    a = params.transitions
    inner = F.take(a, (slice(0, size), slice(0, size)))
    alpha = F.take(a, (tags.start, slice(0, size))) + em[0]
    for t in range(1, em.shape[0]):
        scores = F.reshape(alpha, (size, 1)) + inner
        alpha = F.logsumexp(scores, axis=0) + em[t]
    final = alpha + F.take(a, (slice(0, size), tags.stop))
    return F.logsumexp(final, axis=0)


def crf_nll(h: Value | Sequence[Value], gold_tags: Sequence[int], params: CrfParams) -> Value:
    """``log Z(h) - S(gold, h)``."""
    x = _as_matrix(h)
    return log_partition(x, params) - sequence_score(x, gold_tags, params)


def viterbi_decode(h: Value | Sequence[Value], params: CrfParams) -> tuple[list[int], float]:
    """Highest-scoring tag sequence and its score.

    Ties go to the lowest tag index at every backpointer.
    """
    x = _as_matrix(h)
    tags = params.tags
    size = tags.size
    a = params.transitions.data
    em = x.data @ params.label_embeddings.data.T
    inner = a[:size, :size]
    delta = a[tags.start, :size] + em[0]
    backpointers = []
    for t in range(1, em.shape[0]):
        scores = delta[:, None] + inner
        best = np.argmax(scores, axis=0)
        backpointers.append(best)
        delta = scores[best, np.arange(size)] + em[t]
    final = delta + a[:size, tags.stop]
    last = int(np.argmax(final))
    path = [last]
    for best in reversed(backpointers):
        path.append(int(best[path[-1]]))
    path.reverse()
    return path, float(final[last])


def labeled_tags_to_spans(tags: Sequence[int], tagset: TagSet) -> list[tuple[int, int, int]]:
    """``(start, end, label)`` spans of a BIO tag sequence.

    An ``I`` tag that does not continue a span of the same label starts a new one.
    """
    spans: list[tuple[int, int, int]] = []
    current: list[int] | None = None
    for i, tag in enumerate(tags):
        if tag == tagset.outside:
            current = None
            continue
        label, inside = divmod(int(tag), 2)
        if inside and current is not None and current[2] == label:
            current[1] = i + 1
            spans[-1] = (current[0], current[1], label)
            continue
        current = [i, i + 1, label]
        spans.append((i, i + 1, label))
    return spans


def labeled_spans_to_tags(spans: Sequence[tuple[int, int, int]], length: int, tagset: TagSet) -> list[int]:
    tags = [tagset.outside] * length
    for start, end, label in spans:
        if not 0 <= start < end <= length:
            raise ShapeError("spans_to_tags", (start, end), (length,), detail="span outside sequence")
        tags[start] = tagset.begin(label)
        for i in range(start + 1, end):
            tags[i] = tagset.inside(label)
    return tags


def tags_to_spans(tags: Sequence[int]) -> list[tuple[int, int]]:
    """Half-open spans of a ``{sym_B, sym_I, O}`` sequence."""
    return [(start, end) for start, end, _ in labeled_tags_to_spans(tags, SPAN_TAGS)]


def spans_to_tags(spans: Sequence[tuple[int, int]], length: int) -> list[int]:
    return labeled_spans_to_tags([(s, e, 0) for s, e in spans], length, SPAN_TAGS)
