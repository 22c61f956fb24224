"""Learned extractors and their checkpoint registry."""

from __future__ import annotations

from pathlib import Path

from sxextract.core import MODEL_TYPES, ExperimentConfig, SatConfig, Seq2SeqConfig, config_from_dict
from sxextract.core.errors import CheckpointError, ConfigError
from sxextract.extractors.base import Encoder, Example, Extractor, adopt_encoder, load_pretrained_encoder
from sxextract.extractors.crossproduct import BodySystemTagger, CrossProductTagger
from sxextract.extractors.pretrain import NextTurnModel, next_turn_examples
from sxextract.extractors.seq2seq import Seq2SeqModel
from sxextract.extractors.span_attribute import SatModel
from sxextract.extractors.vocab import Vocab
from sxextract.models import Ontology
from sxextract.nn.checkpoint import load_parameters, read_checkpoint

__all__ = [
    "EXTRACTORS",
    "BodySystemTagger",
    "CrossProductTagger",
    "Encoder",
    "Example",
    "Extractor",
    "NextTurnModel",
    "SatModel",
    "Seq2SeqModel",
    "Vocab",
    "adopt_encoder",
    "build_extractor",
    "load_extractor",
    "load_pretrained_encoder",
    "next_turn_examples",
]

EXTRACTORS: dict[str, type[Extractor]] = {
    "sat": SatModel,
    "seq2seq": Seq2SeqModel,
    "baseline_crossproduct": CrossProductTagger,
    "baseline_bodysystem": BodySystemTagger,
}


def build_extractor(
    model_type: str, config: ExperimentConfig, vocab: Vocab, ontology: Ontology, seed: int = 0
) -> Extractor:
    """Fresh model of ``model_type``; Seq2Seq reads ``[seq2seq]``, the others ``[sat]``."""
    if model_type not in MODEL_TYPES:
        raise ConfigError(f"unknown model type {model_type!r}; choose from {list(MODEL_TYPES)}")
    cls = EXTRACTORS[model_type]
    section = config.seq2seq if model_type == "seq2seq" else config.sat
    return cls(section, vocab, ontology, seed)  # type: ignore[arg-type]


def load_extractor(path: Path) -> Extractor:
    """Rebuild a trained extractor from its checkpoint."""
    arrays, meta = read_checkpoint(path)
    if meta.get("kind") != "extractor":
        raise CheckpointError(f"{path} is not an extractor checkpoint (kind={meta.get('kind')!r})")
    model_type = meta["model_type"]
    if model_type not in EXTRACTORS:
        raise CheckpointError(f"{path}: unknown model type {model_type!r}")
    section_cls = Seq2SeqConfig if model_type == "seq2seq" else SatConfig
    config = config_from_dict(section_cls, meta["config"])
    ontology = Ontology.from_pairs((s, b) for s, b in meta["ontology"])
    model = EXTRACTORS[model_type](config, Vocab(meta["vocab"]), ontology, int(meta["seed"]))  # type: ignore[arg-type]
    load_parameters(model, arrays)
    model.eval()
    return model
