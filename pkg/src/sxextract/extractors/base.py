"""Shared encoder and the common surface of every trainable extractor."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar, Literal

import numpy as np

from sxextract.core import NoiseConfig, config_hash, config_to_dict
from sxextract.core.errors import CheckpointError
from sxextract.core.logging import get_logger
from sxextract.extractors.vocab import InputUnit, Vocab
from sxextract.models import AnnotatedConversation, Conversation, MentionSet, Ontology, SpanLabel, Status
from sxextract.nn import value as F
from sxextract.nn.checkpoint import load_parameters, read_checkpoint, save_checkpoint
from sxextract.nn.layers import BiLSTM, Embedding, Module, WeightNoise
from sxextract.nn.value import Value

__all__ = [
    "Encoder",
    "Example",
    "Extractor",
    "KeySpace",
    "unit_span_to_label",
    "load_pretrained_encoder",
    "adopt_encoder",
    "save_encoder",
]

logger = get_logger("extractors")

KeySpace = Literal["symptom", "body_system"]


class Encoder(Module):
    """Word embeddings followed by a stacked BiLSTM; the part shared by every model."""

    def __init__(
        self,
        vocab_size: int,
        emb_dim: int,
        hidden: int,
        layers: int,
        dropout: float,
        rng: np.random.Generator,
        dropout_rng: np.random.Generator,
        noise: WeightNoise | None = None,
        dtype: Any = np.float64,
    ) -> None:
        self.embedding = Embedding(vocab_size, emb_dim, rng, noise, dtype)
        self.bilstm = BiLSTM(emb_dim, hidden, layers, rng, noise, dtype)
        self._dropout = dropout
        self._dropout_rng = dropout_rng

    @property
    def output_dim(self) -> int:
        return self.bilstm.output_dim

    @property
    def dims(self) -> dict[str, int]:
        return {
            "vocab_size": int(self.embedding.table.shape[0]),
            "word_emb_dim": int(self.embedding.table.shape[1]),
            "lstm_hidden": self.bilstm.hidden,
            "layers": len(self.bilstm.forward_cells),
        }

    def __call__(self, ids: Sequence[int]) -> Value:
        x = F.dropout(self.embedding(ids), self._dropout, self._dropout_rng, self.training)
        return F.dropout(self.bilstm(x), self._dropout, self._dropout_rng, self.training)


@dataclass(frozen=True)
class Example:
    """One training unit: encoder input ids plus a model-specific target."""

    unit_id: str
    ids: tuple[int, ...]
    target: Any


def unit_span_to_label(unit: InputUnit, start: int, end: int, symptom: str, status: Status) -> SpanLabel | None:
    """Map a unit-level span back to its turn; marker-only spans map to ``None``.

    A span crossing a turn boundary is clipped to the turn of its first token.
    """
    sources = [p for p in unit.positions[start:end] if p is not None]
    if not sources:
        return None
    turn = sources[0][0]
    indices = [i for t, i in sources if t == turn]
    return SpanLabel(turn, min(indices), max(indices) + 1, symptom, status)


class Extractor(Module):
    """Common surface used by training, evaluation and checkpointing."""

    model_type: ClassVar[str] = ""
    key_space: ClassVar[KeySpace] = "symptom"
    uses_curriculum: ClassVar[bool] = False

    def __init__(self, vocab: Vocab, ontology: Ontology, seed: int, weight_noise_std: float) -> None:
        self._vocab = vocab
        self._ontology = ontology
        self._seed = seed
        self._init_rng = np.random.default_rng([seed, 0])
        self._dropout_rng = np.random.default_rng([seed, 1])
        self._coin_rng = np.random.default_rng([seed, 2])
        self._noise = WeightNoise(NoiseConfig(weight_noise_std=weight_noise_std, rng_seed=seed + 3))

    @property
    def vocab(self) -> Vocab:
        return self._vocab

    @property
    def ontology(self) -> Ontology:
        return self._ontology

    @property
    def config(self) -> Any:
        raise NotImplementedError

    def resample_noise(self) -> None:
        self._noise.resample()

    def draw_coin(self) -> float:
        """Uniform draw deciding a unit's span source; consumed once per training unit."""
        return float(self._coin_rng.random())

    def training_examples(
        self, corpus: Sequence[AnnotatedConversation], annotator: str | None = None
    ) -> list[Example]:
        raise NotImplementedError

    def example_loss(self, example: Example, p: float = 1.0) -> Value:
        raise NotImplementedError

    def predict_labels(self, conversation: Conversation) -> list[SpanLabel]:
        raise NotImplementedError

    def infer_conversation(self, conversation: Conversation) -> MentionSet:
        raise NotImplementedError

    def metadata(self) -> dict[str, Any]:
        return {
            "kind": "extractor",
            "model_type": self.model_type,
            "config": config_to_dict(self.config),
            "config_hash": config_hash(self.config),
            "seed": self._seed,
            "vocab": self._vocab.tokens,
            "ontology": [[s, self._ontology.body_system(s)] for s in self._ontology.symptoms],
        }

    def save(self, path: Path, **extra: Any) -> Path:
        return save_checkpoint(path, self.parameters(), {**self.metadata(), **extra})

    def encoder_checkpoint(self, path: Path, **extra: Any) -> Path:
        return save_encoder(path, self.encoder, self._vocab, **extra)  # type: ignore[attr-defined]


def save_encoder(path: Path, encoder: Encoder, vocab: Vocab, **extra: Any) -> Path:
    """Save an encoder alone, with its vocabulary."""
    params = {f"encoder.{name}": p for name, p in encoder.named_parameters()}
    return save_checkpoint(path, params, {"kind": "encoder", "vocab": vocab.tokens, **encoder.dims, **extra})


def load_pretrained_encoder(path: Path) -> tuple[dict[str, np.ndarray], dict[str, Any], Vocab]:
    """Read an encoder-only checkpoint; returns ``(arrays, metadata, vocab)``."""
    arrays, meta = read_checkpoint(path)
    if meta.get("kind") != "encoder":
        raise CheckpointError(f"{path} is not an encoder checkpoint (kind={meta.get('kind')!r})")
    return arrays, meta, Vocab(meta["vocab"])


def adopt_encoder(model: Extractor, arrays: dict[str, np.ndarray]) -> list[str]:
    """Copy pretrained encoder weights into ``model``; shapes must agree exactly."""
    loaded = load_parameters(model.encoder, arrays, prefix="encoder.")  # type: ignore[attr-defined]
    logger.info("pretrained encoder loaded", extra={"parameters": len(loaded), "model_type": model.model_type})
    return loaded
