"""Data models for sxextract."""

from sxextract.models.corpus import (
    STATUSES,
    AnnotatedConversation,
    Conversation,
    MentionSet,
    Ontology,
    SpanLabel,
    Speaker,
    Status,
    Turn,
)
from sxextract.models.reports import (
    MODES,
    PRF,
    VIEWS,
    WEIGHTINGS,
    ConversationScore,
    ExtractorProtocol,
    MetricsReport,
    Mode,
    View,
    Weighting,
)

__all__ = [
    "STATUSES",
    "MODES",
    "VIEWS",
    "WEIGHTINGS",
    "AnnotatedConversation",
    "Conversation",
    "ConversationScore",
    "ExtractorProtocol",
    "MentionSet",
    "MetricsReport",
    "Mode",
    "Ontology",
    "PRF",
    "SpanLabel",
    "Speaker",
    "Status",
    "Turn",
    "View",
    "Weighting",
]
