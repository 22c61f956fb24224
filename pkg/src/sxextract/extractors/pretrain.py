"""Next-turn prediction for encoder pre-training.

The encoder reads ``k - 1`` consecutive turns and a throwaway word-level
attention decoder predicts the following turn. Only the encoder is kept.
"""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

from sxextract.core import NoiseConfig, Seq2SeqConfig
from sxextract.core.errors import ShapeError
from sxextract.extractors.base import Encoder, Example, save_encoder
from sxextract.extractors.seq2seq import AttentionDecoder
from sxextract.extractors.vocab import Vocab, join_turns
from sxextract.models import Conversation
from sxextract.nn.layers import Module, WeightNoise
from sxextract.nn.value import Value

__all__ = ["NextTurnModel", "next_turn_examples"]


def next_turn_examples(conversations: Sequence[Conversation], context_turns: int, vocab: Vocab) -> list[Example]:
    """``context_turns`` turns (with speaker markers) paired with the next turn's words."""
    context_turns = max(1, context_turns)
    examples = []
    for conversation in conversations:
        for i in range(len(conversation) - context_turns):
            context = join_turns(conversation, range(i, i + context_turns))
            target = [*vocab.encode(conversation.turns[i + context_turns].tokens), vocab.eos]
            examples.append(Example(context.id, tuple(vocab.encode(context.tokens)), tuple(target)))
    return examples


class NextTurnModel(Module):
    """Shared encoder architecture plus a decoder over the word vocabulary."""

    def __init__(self, config: Seq2SeqConfig, vocab: Vocab, seed: int = 0) -> None:
        config.validate()
        self._config = config
        self._vocab = vocab
        self._seed = seed
        rng = np.random.default_rng([seed, 0])
        self._noise = WeightNoise(NoiseConfig(weight_noise_std=config.weight_noise_std, rng_seed=seed + 3))
        dtype: Any = np.dtype(config.dtype)
        self.encoder = Encoder(
            len(vocab),
            config.word_emb_dim,
            config.lstm_hidden,
            config.layers,
            config.dropout,
            rng,
            np.random.default_rng([seed, 1]),
            self._noise,
            dtype,
        )
        self.decoder = AttentionDecoder(
            len(vocab),
            config.word_emb_dim,
            self.encoder.output_dim,
            config.lstm_hidden,
            config.attention_dim,
            rng,
            self._noise,
            dtype,
        )

    @property
    def vocab(self) -> Vocab:
        return self._vocab

    @property
    def config(self) -> Seq2SeqConfig:
        return self._config

    def resample_noise(self) -> None:
        self._noise.resample()

    def example_loss(self, example: Example, p: float = 1.0) -> Value:
        if not example.ids:
            raise ShapeError("next_turn", (0,), detail="empty context")
        state = self.decoder.start(self.encoder(example.ids))
        previous = self._vocab.bos
        loss: Value | None = None
        for token in example.target:
            log_probs, _, state = self.decoder.step(state, previous)
            term = -log_probs[int(token)]
            loss = term if loss is None else loss + term
            previous = int(token)
        assert loss is not None
        return loss

    def encoder_checkpoint(self, path: Path, **extra: Any) -> Path:
        return save_encoder(path, self.encoder, self._vocab, seed=self._seed, **extra)
