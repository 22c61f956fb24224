"""sxextract test suite package.

Tests are grouped by area: nn, crf, corpus, metrics, sat, seq2seq,
training, evaluation, cli and verification. Shared fixtures live in conftest.py.
"""

__all__: list[str] = []
