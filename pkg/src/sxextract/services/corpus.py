"""
Corpus service for sxextract.

Generates the synthetic clinical-conversation corpus, builds evaluation
references from several annotators, simulates recognizer noise and moves
labels from manual transcripts onto noisy ones.
"""

from __future__ import annotations

import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from statistics import median

import numpy as np

from sxextract.core import AsrNoiseConfig, GeneratorConfig
from sxextract.core.errors import AlignmentError, SxError
from sxextract.core.logging import get_logger
from sxextract.models import (
    AnnotatedConversation,
    Conversation,
    MentionSet,
    Ontology,
    SpanLabel,
    Speaker,
    Status,
    Turn,
)

__all__ = [
    "SYSTEM_PARTS",
    "SYMPTOM_KINDS",
    "AsrReport",
    "TransferReport",
    "annotator_names",
    "build_ontology",
    "surface_forms",
    "generate_corpus",
    "vote",
    "voted_reference",
    "any_reference",
    "single_reference",
    "simulate_asr",
    "align_tokens",
    "transfer_labels",
    "asr_corpus",
]

logger = get_logger("services.corpus")

# body-part words are unique across systems so every symptom is identifiable
SYSTEM_PARTS: dict[str, tuple[str, ...]] = {
    "musculo-skeletal": ("back", "knee", "shoulder", "hip", "ankle"),
    "respiratory": ("chest", "lungs", "breathing", "airway"),
    "gastrointestinal": ("stomach", "belly", "bowel", "gut"),
    "cardiovascular": ("heart", "pulse", "heartbeat", "veins"),
    "neurological": ("head", "nerves", "memory", "balance"),
    "dermatological": ("skin", "scalp", "rash", "nails"),
    "genitourinary": ("bladder", "kidney", "urine", "groin"),
    "ophthalmological": ("eyes", "vision", "eyelid", "sight"),
    "ent": ("ears", "nose", "throat", "sinus"),
    "psychiatric": ("mood", "sleep", "thoughts", "spirits"),
    "endocrine": ("thyroid", "sugar", "appetite", "thirst"),
    "hematologic": ("blood", "gums", "bruises", "glands"),
    "constitutional": ("energy", "weight", "temperature", "body"),
    "immunologic": ("allergies", "immunity", "hives", "lymph"),
}

SYMPTOM_KINDS: dict[str, tuple[str, ...]] = {
    "pain": ("pain", "ache", "soreness"),
    "swelling": ("swelling", "puffiness", "bloating"),
    "stiffness": ("stiffness", "tightness", "rigidity"),
    "itching": ("itching", "itchiness", "irritation"),
    "weakness": ("weakness", "feebleness", "frailty"),
    "bleeding": ("bleeding", "spotting", "oozing"),
    "numbness": ("numbness", "tingling", "deadness"),
    "burning": ("burning", "stinging", "heat"),
    "cramping": ("cramping", "spasms", "twitching"),
    "discomfort": ("discomfort", "unease", "pressure"),
}

_DR_FILLER = (
    ("how", "are", "you", "doing", "today"),
    ("let", "us", "review", "your", "medications"),
    ("any", "questions", "for", "me"),
    ("we", "will", "check", "your", "labs", "next", "week"),
    ("okay", "that", "makes", "sense"),
    ("tell", "me", "more", "about", "your", "week"),
)
_PT_FILLER = (
    ("i", "am", "doing", "alright"),
    ("mostly", "fine", "thanks"),
    ("i", "took", "the", "pills", "every", "morning"),
    ("work", "has", "been", "busy"),
    ("yeah", "i", "think", "so"),
    ("nothing", "else", "really"),
)
_OTHER_FILLER = (
    ("she", "has", "been", "worried", "about", "this"),
    ("i", "drove", "him", "here", "today"),
    ("he", "keeps", "forgetting", "his", "pills"),
)

_SLOT = "{}"
_EXPLICIT = (
    ("i", "have", "had", _SLOT, "for", "two", "weeks"),
    ("my", _SLOT, "has", "been", "bad", "lately"),
    ("i", "keep", "getting", _SLOT),
    ("the", _SLOT, "started", "on", "monday"),
)
_NEGATED = (
    ("i", "have", "not", "had", "any", _SLOT),
    ("no", _SLOT, "at", "all"),
    ("there", "is", "no", _SLOT),
)
_OTHER_PERSON = (
    ("my", "wife", "has", _SLOT),
    ("my", "father", "had", _SLOT, "for", "years"),
    ("my", "son", "gets", _SLOT, "sometimes"),
)
_QUESTION = (
    ("any", _SLOT, "recently"),
    ("have", "you", "noticed", "any", _SLOT),
    ("what", "about", _SLOT),
)
_ANSWER_YES = (("yes", "quite", "a", "bit"), ("yeah", "it", "has", "been", "bothering", "me"))
_ANSWER_NO = (("no", "not", "really"), ("nope", "none", "of", "that"))

CONFUSION_WORDS = ("uh", "the", "and", "a", "um", "that", "it", "so", "in", "of")


def annotator_names(count: int) -> list[str]:
    return [f"scribe_{i + 1}" for i in range(count)]


def build_ontology(config: GeneratorConfig) -> Ontology:
    """Deterministic ontology: symptom ``i`` belongs to system ``i % n_systems``."""
    config.validate()
    systems = list(SYSTEM_PARTS)
    if config.n_systems > len(systems):
        raise SxError(f"at most {len(systems)} body systems are available", component="corpus")
    systems = systems[: config.n_systems]
    combos = {
        system: [(part, kind) for kind in SYMPTOM_KINDS for part in SYSTEM_PARTS[system]] for system in systems
    }
    pairs = []
    for i in range(config.n_symptoms):
        system = systems[i % len(systems)]
        rank = i // len(systems)
        if rank >= len(combos[system]):
            raise SxError(f"cannot name {config.n_symptoms} symptoms over {len(systems)} systems", component="corpus")
        part, kind = combos[system][rank]
        pairs.append((f"sym:{system}:{part}-{kind}", system))
    return Ontology.from_pairs(pairs)


def surface_forms(symptom: str, variants: int) -> list[tuple[str, ...]]:
    """Up to four paraphrases of a symptom; unknown naming schemes get one literal form."""
    name = symptom.rsplit(":", 1)[-1]
    part, _, kind = name.partition("-")
    if kind not in SYMPTOM_KINDS:
        return [tuple(w for w in name.replace("_", "-").split("-") if w)]
    synonyms = SYMPTOM_KINDS[kind]
    forms = [
        (part, synonyms[0]),
        (part, synonyms[1]),
        (synonyms[2], "in", "the", part),
        (synonyms[0], "around", "the", part),
    ]
    return forms[: max(1, min(variants, len(forms)))]


def _fill(template: tuple[str, ...], surface: tuple[str, ...]) -> tuple[tuple[str, ...], int, int]:
    slot = template.index(_SLOT)
    tokens = (*template[:slot], *surface, *template[slot + 1 :])
    return tokens, slot, slot + len(surface)


def _pick(rng: np.random.Generator, options: Sequence[tuple[str, ...]]) -> tuple[str, ...]:
    return options[int(rng.integers(len(options)))]


@dataclass(frozen=True)
class _Segment:
    """Consecutive turns; ``label`` marks ``(turn offset, start, end, symptom, status)``."""

    turns: tuple[tuple[Speaker, tuple[str, ...]], ...]
    label: tuple[int, int, int, str, Status] | None = None


def _mention(rng: np.random.Generator, config: GeneratorConfig, ontology: Ontology) -> _Segment:
    symptom = ontology.symptoms[int(rng.integers(len(ontology)))]
    u = rng.random()
    if u < config.negation_rate:
        status = Status.NOT_EXPERIENCED
    elif u < config.negation_rate + config.other_rate:
        status = Status.OTHER
    else:
        status = Status.EXPERIENCED
    implied = status != Status.OTHER and rng.random() < config.implied_rate
    forms = surface_forms(symptom, config.paraphrase_variants)
    surface = forms[int(rng.integers(len(forms)))]
    if implied:
        tokens, start, end = _fill(_pick(rng, _QUESTION), surface)
        answer = _pick(rng, _ANSWER_YES if status == Status.EXPERIENCED else _ANSWER_NO)
        return _Segment(((Speaker.DR, tokens), (Speaker.PT, answer)), (0, start, end, symptom, status))
    templates = {Status.EXPERIENCED: _EXPLICIT, Status.NOT_EXPERIENCED: _NEGATED, Status.OTHER: _OTHER_PERSON}
    tokens, start, end = _fill(_pick(rng, templates[status]), surface)
    return _Segment(((Speaker.PT, tokens),), (0, start, end, symptom, status))


def _filler(rng: np.random.Generator, config: GeneratorConfig) -> _Segment:
    if rng.random() < config.other_speaker_rate:
        return _Segment(((Speaker.OTHER, _pick(rng, _OTHER_FILLER)),))
    if rng.random() < 0.5:
        return _Segment(((Speaker.DR, _pick(rng, _DR_FILLER)),))
    return _Segment(((Speaker.PT, _pick(rng, _PT_FILLER)),))


def _perturb(
    label: SpanLabel, rng: np.random.Generator, rate: float, conversation: Conversation, ontology: Ontology
) -> SpanLabel | None:
    """Drop, swap to a same-system symptom, or shift a boundary, with probability ``rate``."""
    if rng.random() >= rate:
        return label
    action = int(rng.integers(3))
    if action == 0:
        return None
    if action == 1:
        siblings = [s for s in ontology.symptoms_in(ontology.body_system(label.symptom)) if s != label.symptom]
        if not siblings:
            return None
        return SpanLabel(label.turn, label.start, label.end, siblings[int(rng.integers(len(siblings)))], label.status)
    length = len(conversation.turns[label.turn])
    if label.end < length:
        return SpanLabel(label.turn, label.start, label.end + 1, label.symptom, label.status)
    if label.end - label.start > 1:
        return SpanLabel(label.turn, label.start, label.end - 1, label.symptom, label.status)
    if label.start > 0:
        return SpanLabel(label.turn, label.start - 1, label.end, label.symptom, label.status)
    return label


def _conversation(
    index: int,
    config: GeneratorConfig,
    ontology: Ontology,
    seed: int,
    stream: int,
    n_annotators: int,
    prefix: str,
) -> AnnotatedConversation:
    rng = np.random.default_rng([seed, stream, index])
    segments = [_mention(rng, config, ontology) for _ in range(int(rng.poisson(config.mention_rate)))]
    n_turns = int(rng.integers(config.min_turns, config.max_turns + 1))
    used = 1 + sum(len(s.turns) for s in segments)
    segments.extend(_filler(rng, config) for _ in range(max(0, n_turns - used)))
    order = rng.permutation(len(segments))
    greeting = _Segment(((Speaker.DR, _pick(rng, _DR_FILLER)),))

    turns: list[Turn] = []
    truth: list[SpanLabel] = []
    for segment in [greeting, *(segments[i] for i in order)]:
        if segment.label is not None:
            offset, start, end, symptom, status = segment.label
            truth.append(SpanLabel(len(turns) + offset, start, end, symptom, status))
        turns.extend(Turn(speaker, tokens) for speaker, tokens in segment.turns)
    conversation = Conversation(f"{prefix}-{index:05d}", tuple(turns))

    annotations = {}
    for a, name in enumerate(annotator_names(n_annotators)):
        ann_rng = np.random.default_rng([seed, stream, index, a + 1])
        perturbed = (_perturb(label, ann_rng, config.disagreement_rate, conversation, ontology) for label in truth)
        annotations[name] = tuple(label for label in perturbed if label is not None)
    return AnnotatedConversation(conversation, annotations, tuple(truth))


def generate_corpus(
    config: GeneratorConfig,
    seed: int,
    ontology: Ontology | None = None,
    n_annotators: int = 3,
    n_conversations: int | None = None,
    prefix: str = "conv",
    stream: int = 0,
) -> list[AnnotatedConversation]:
    """Template-generated conversations with exact ground truth and perturbed annotators.

    Deterministic for fixed arguments; ``stream`` separates splits drawn
    from the same seed.
    """
    config.validate()
    if n_annotators < 1:
        raise SxError("need at least one annotator", component="corpus")
    ontology = ontology or build_ontology(config)
    count = config.n_conversations if n_conversations is None else n_conversations
    corpus = [_conversation(i, config, ontology, seed, stream, n_annotators, prefix) for i in range(count)]
    logger.info(
        "corpus generated",
        extra={
            "prefix": prefix,
            "n_conversations": len(corpus),
            "n_labels": sum(len(c.truth or ()) for c in corpus),
            "annotators": n_annotators,
        },
    )
    return corpus


def vote(mention_sets: Sequence[MentionSet]) -> MentionSet:
    """Keys held by at least two of three annotators, at the median count (minimum 1)."""
    if len(mention_sets) != 3:
        raise SxError(f"voting needs exactly 3 annotators, got {len(mention_sets)}", component="corpus")
    keys = set().union(*(m.keys() for m in mention_sets))
    counts = {}
    for key in keys:
        per_annotator = [m.count(key) for m in mention_sets]
        if sum(1 for c in per_annotator if c > 0) >= 2:
            counts[key] = max(1, int(median(per_annotator)))
    return MentionSet(counts)


def voted_reference(annotations: Sequence[Sequence[SpanLabel]]) -> MentionSet:
    return vote([MentionSet.from_labels(labels) for labels in annotations])


def any_reference(annotations: Sequence[Sequence[SpanLabel]]) -> list[MentionSet]:
    return [MentionSet.from_labels(labels) for labels in annotations]


def single_reference(item: AnnotatedConversation, seed: int) -> MentionSet:
    """One annotator's mentions, picked per conversation from ``seed`` and the conversation id."""
    names = item.annotators
    rng = np.random.default_rng([seed, zlib.crc32(item.id.encode("utf-8"))])
    return MentionSet.from_labels(item.annotations[names[int(rng.integers(len(names)))]])


@dataclass
class AsrReport:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_tokens: int = 0

    @property
    def wer(self) -> float:
        if self.reference_tokens == 0:
            return 0.0
        return (self.substitutions + self.deletions + self.insertions) / self.reference_tokens

    def add(self, other: AsrReport) -> AsrReport:
        return AsrReport(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_tokens + other.reference_tokens,
        )


def _confuse(token: str, rng: np.random.Generator) -> str:
    if len(token) > 2 and rng.random() < 0.5:
        return token[:-1] if token.endswith("s") else f"{token}s"
    choice = CONFUSION_WORDS[int(rng.integers(len(CONFUSION_WORDS)))]
    if choice == token:
        choice = CONFUSION_WORDS[(CONFUSION_WORDS.index(choice) + 1) % len(CONFUSION_WORDS)]
    return choice


def simulate_asr(conversation: Conversation, config: AsrNoiseConfig, seed: int) -> tuple[Conversation, AsrReport]:
    """Independent per-token substitutions, deletions and insertions.

    A turn never loses its last surviving token.
    """
    config.validate()
    rng = np.random.default_rng([seed, zlib.crc32(conversation.id.encode("utf-8"))])
    report = AsrReport()
    turns = []
    for turn in conversation.turns:
        out: list[str] = []
        survived = 0
        for i, token in enumerate(turn.tokens):
            report.reference_tokens += 1
            u = rng.random()
            if u < config.substitution_rate:
                out.append(_confuse(token, rng))
                report.substitutions += 1
                survived += 1
            elif u < config.substitution_rate + config.deletion_rate and (survived or i < len(turn.tokens) - 1):
                report.deletions += 1
            else:
                out.append(token)
                survived += 1
            if rng.random() < config.insertion_rate:
                out.append(CONFUSION_WORDS[int(rng.integers(len(CONFUSION_WORDS)))])
                report.insertions += 1
        turns.append(Turn(turn.speaker, tuple(out)))
    return Conversation(conversation.id, tuple(turns)), report


def align_tokens(source: Sequence[str], target: Sequence[str]) -> list[int | None]:
    """Minimum-edit-distance alignment; ``result[i]`` is the target index of source token ``i``.

    Matches are case-insensitive; unit costs. Backtracking prefers a
    match/substitution, then a deletion, then an insertion.
    """
    n, m = len(source), len(target)
    src = [t.lower() for t in source]
    tgt = [t.lower() for t in target]
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if src[i - 1] == tgt[j - 1] else 1
            dist[i, j] = min(dist[i - 1, j - 1] + cost, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    mapping: list[int | None] = [None] * n
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (0 if src[i - 1] == tgt[j - 1] else 1):
            mapping[i - 1] = j - 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            i -= 1
        else:
            j -= 1
    return mapping


@dataclass
class TransferReport:
    transferred: int = 0
    discarded: int = 0

    @property
    def discard_rate(self) -> float:
        total = self.transferred + self.discarded
        return self.discarded / total if total else 0.0

    def add(self, other: TransferReport) -> TransferReport:
        return TransferReport(self.transferred + other.transferred, self.discarded + other.discarded)


def _move(label: SpanLabel, mappings: Sequence[list[int | None]]) -> SpanLabel | None:
    aligned = mappings[label.turn][label.start : label.end]
    if any(index is None for index in aligned):
        return None
    indices = [index for index in aligned if index is not None]
    return SpanLabel(label.turn, min(indices), max(indices) + 1, label.symptom, label.status)


def transfer_labels(
    source: AnnotatedConversation, target: Conversation
) -> tuple[AnnotatedConversation, TransferReport]:
    """Move labels onto a parallel transcript turn by turn.

    A span survives only if each of its tokens aligns to a target token.
    """
    conversation = source.conversation
    if len(conversation) != len(target):
        raise AlignmentError(
            f"{conversation.id}: source has {len(conversation)} turns, target has {len(target)}"
        )
    for t, (a, b) in enumerate(zip(conversation.turns, target.turns)):
        if a.speaker != b.speaker:
            raise AlignmentError(f"{conversation.id}: speaker mismatch at turn {t} ({a.speaker} vs {b.speaker})")
    mappings = [align_tokens(a.tokens, b.tokens) for a, b in zip(conversation.turns, target.turns)]
    report = TransferReport()
    annotations = {}
    for name, labels in source.annotations.items():
        moved = []
        for label in labels:
            new = _move(label, mappings)
            if new is None:
                report.discarded += 1
            else:
                report.transferred += 1
                moved.append(new)
        annotations[name] = tuple(moved)
    truth = None
    if source.truth is not None:
        truth = tuple(new for new in (_move(label, mappings) for label in source.truth) if new is not None)
    return AnnotatedConversation(target, annotations, truth), report


def asr_corpus(
    corpus: Sequence[AnnotatedConversation], config: AsrNoiseConfig, seed: int
) -> tuple[list[AnnotatedConversation], AsrReport, TransferReport]:
    """Noisy copies of ``corpus`` with labels transferred onto them."""
    out = []
    asr_total = AsrReport()
    transfer_total = TransferReport()
    for item in corpus:
        noisy, asr = simulate_asr(item.conversation, config, seed)
        moved, transfer = transfer_labels(item, noisy)
        out.append(moved)
        asr_total = asr_total.add(asr)
        transfer_total = transfer_total.add(transfer)
    logger.info(
        "asr corpus simulated",
        extra={
            "n_conversations": len(out),
            "wer": round(asr_total.wer, 4),
            "discarded": transfer_total.discarded,
            "discard_rate": round(transfer_total.discard_rate, 4),
        },
    )
    return out, asr_total, transfer_total
