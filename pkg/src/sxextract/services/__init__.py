"""sxextract services layer.

Contains the corpus, training, evaluation and verification services
that the CLI composes into commands.

This module provides:
- Synthetic corpus generation, simulated recognizer noise and label transfer
- Corpus and ontology file reading and writing
- Mention-count metrics, agreement statistics and reports
- Training loops, encoder pre-training and oracle verification
"""

__all__: list[str] = [
    "agreement",
    "corpus",
    "corpus_io",
    "evaluation",
    "metrics",
    "reporting",
    "training",
    "verification",
]
