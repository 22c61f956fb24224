"""Trainable building blocks: modules, dense layers, embeddings and LSTMs."""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from typing import Any, NamedTuple

import numpy as np

from sxextract.core import NoiseConfig
from sxextract.core.errors import ShapeError
from sxextract.nn import value as F
from sxextract.nn.value import Value

__all__ = [
    "Module",
    "WeightNoise",
    "Linear",
    "Embedding",
    "LSTMWeights",
    "LSTM",
    "BiLSTM",
    "FeedForward",
    "lstm_cell",
    "bilstm_encode",
    "uniform_init",
    "glorot_init",
]


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], scale: float, dtype: Any) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def glorot_init(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...], dtype: Any) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class WeightNoise:
    """Gaussian perturbation of weights, resampled once per training batch.

    With ``std == 0`` or outside training the weight itself is returned, so
    the noiseless forward pass is reproduced exactly.
    """

    def __init__(self, config: NoiseConfig) -> None:
        config.validate()
        self.std = config.weight_noise_std
        self.rng = np.random.default_rng(config.rng_seed)
        self._draws: dict[int, np.ndarray] = {}

    def resample(self) -> None:
        self._draws.clear()

    def apply(self, weight: Value, training: bool) -> Value:
        if not training or self.std == 0.0:
            return weight
        draw = self._draws.get(id(weight))
        if draw is None:
            draw = self.rng.normal(0.0, self.std, size=weight.shape).astype(weight.data.dtype)
            self._draws[id(weight)] = draw
        return weight + Value(draw)


class Module:
    """Container of named parameters and child modules.

    Parameters are the ``Value`` attributes with ``requires_grad``; names are
    dotted attribute paths in definition order.
    """

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Value]]:
        for attr, item in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(item, Value) and item.requires_grad:
                yield name, item
            elif isinstance(item, Module):
                yield from item.named_parameters(f"{name}.")
            elif isinstance(item, (list, tuple)):
                for i, child in enumerate(item):
                    if isinstance(child, Module):
                        yield from child.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Value]:
        return dict(self.named_parameters())

    def children(self) -> Iterator[Module]:
        for attr, item in vars(self).items():
            if attr.startswith("_"):
                continue
            if isinstance(item, Module):
                yield item
            elif isinstance(item, (list, tuple)):
                yield from (child for child in item if isinstance(child, Module))

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    @contextmanager
    def inference(self) -> Iterator[None]:
        """Evaluation mode without a tape; the previous mode is restored on exit."""
        was_training = self.training
        self.eval()
        try:
            with F.no_grad():
                yield
        finally:
            self.train(was_training)

    def zero_grad(self) -> None:
        for param in self.parameters().values():
            param.zero_grad()

    def after_update(self) -> None:
        """Hook run after every optimizer step (e.g. to re-pin frozen entries)."""
        for child in self.children():
            child.after_update()


class Linear(Module):
    """Affine map ``x @ W + b`` for a vector or a row-stacked matrix."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        noise: WeightNoise | None = None,
        bias: bool = True,
        dtype: Any = np.float64,
    ) -> None:
        self.weight = Value(glorot_init(rng, in_dim, out_dim, (in_dim, out_dim), dtype), requires_grad=True)
        self.bias = Value(np.zeros(out_dim, dtype=dtype), requires_grad=True) if bias else None
        self._noise = noise

    def __call__(self, x: Value) -> Value:
        weight = self._noise.apply(self.weight, self.training) if self._noise else self.weight
        out = F.matmul(x, weight)
        return out + self.bias if self.bias is not None else out


class Embedding(Module):
    """Lookup table initialized uniformly in ``(-0.1, 0.1)``."""

    def __init__(
        self,
        vocab_size: int,
        dim: int,
        rng: np.random.Generator,
        noise: WeightNoise | None = None,
        dtype: Any = np.float64,
    ) -> None:
        self.table = Value(uniform_init(rng, (vocab_size, dim), 0.1, dtype), requires_grad=True)
        self._noise = noise

    def __call__(self, ids: Sequence[int]) -> Value:
        table = self._noise.apply(self.table, self.training) if self._noise else self.table
        return F.embedding(table, ids)


class LSTMWeights(NamedTuple):
    """Effective weights of one LSTM direction; gate order is input, forget, candidate, output."""

    w_x: Value
    w_h: Value
    b: Value


def _lstm_step(x_proj: Value, h_prev: Value, c_prev: Value, weights: LSTMWeights) -> tuple[Value, Value]:
    hidden = h_prev.shape[-1]
    gates = x_proj + F.matmul(h_prev, weights.w_h) + weights.b
    i = F.sigmoid(gates[0:hidden])
    f = F.sigmoid(gates[hidden : 2 * hidden])
    g = F.tanh(gates[2 * hidden : 3 * hidden])
    o = F.sigmoid(gates[3 * hidden : 4 * hidden])
    c_t = f * c_prev + i * g
    h_t = o * F.tanh(c_t)
    return h_t, c_t


def lstm_cell(x_t: Value, h_prev: Value, c_prev: Value, weights: LSTMWeights) -> tuple[Value, Value]:
    """One step of a standard LSTM; returns ``(h_t, c_t)``."""
    hidden = h_prev.shape[-1]
    if (
        c_prev.shape != h_prev.shape
        or weights.w_h.shape != (hidden, 4 * hidden)
        or weights.b.shape != (4 * hidden,)
        or weights.w_x.shape != (x_t.shape[-1], 4 * hidden)
    ):
        raise ShapeError("lstm_cell", x_t.shape, h_prev.shape, c_prev.shape, weights.w_x.shape, weights.w_h.shape)
    return _lstm_step(F.matmul(x_t, weights.w_x), h_prev, c_prev, weights)


def _run_direction(x: Value, weights: LSTMWeights, reverse: bool) -> list[Value]:
    length = x.shape[0]
    hidden = weights.w_h.shape[0]
    projected = F.matmul(x, weights.w_x)
    h = Value(np.zeros(hidden, dtype=x.data.dtype))
    c = Value(np.zeros(hidden, dtype=x.data.dtype))
    outputs: list[Value | None] = [None] * length
    positions = range(length - 1, -1, -1) if reverse else range(length)
    for t in positions:
        h, c = _lstm_step(projected[t], h, c, weights)
        outputs[t] = h
    return outputs  # type: ignore[return-value]


def bilstm_encode(sequence: Sequence[Value] | Value, forward: LSTMWeights, backward: LSTMWeights) -> list[Value]:
    """Concatenate forward and backward LSTM outputs at every position."""
    x = sequence if isinstance(sequence, Value) else (F.stack(list(sequence)) if len(sequence) else None)
    if x is None or x.shape[0] == 0:
        raise ShapeError("bilstm_encode", (0,), detail="empty sequence")
    if x.ndim != 2 or x.shape[1] != forward.w_x.shape[0] or x.shape[1] != backward.w_x.shape[0]:
        raise ShapeError("bilstm_encode", x.shape, forward.w_x.shape, backward.w_x.shape)
    fwd = _run_direction(x, forward, reverse=False)
    bwd = _run_direction(x, backward, reverse=True)
    return [F.concat([f, b]) for f, b in zip(fwd, bwd)]


class LSTM(Module):
    """Parameters of one LSTM direction (Glorot weights, forget-gate bias +1)."""

    def __init__(
        self,
        in_dim: int,
        hidden: int,
        rng: np.random.Generator,
        noise: WeightNoise | None = None,
        dtype: Any = np.float64,
    ) -> None:
        self.w_x = Value(glorot_init(rng, in_dim, 4 * hidden, (in_dim, 4 * hidden), dtype), requires_grad=True)
        self.w_h = Value(glorot_init(rng, hidden, 4 * hidden, (hidden, 4 * hidden), dtype), requires_grad=True)
        bias = np.zeros(4 * hidden, dtype=dtype)
        bias[hidden : 2 * hidden] = 1.0
        self.b = Value(bias, requires_grad=True)
        self._noise = noise

    @property
    def hidden(self) -> int:
        return int(self.w_h.shape[0])

    def weights(self) -> LSTMWeights:
        if self._noise is None:
            return LSTMWeights(self.w_x, self.w_h, self.b)
        return LSTMWeights(
            self._noise.apply(self.w_x, self.training),
            self._noise.apply(self.w_h, self.training),
            self.b,
        )


class BiLSTM(Module):
    """Stack of bidirectional LSTM layers over a ``(T, in_dim)`` input."""

    def __init__(
        self,
        in_dim: int,
        hidden: int,
        layers: int,
        rng: np.random.Generator,
        noise: WeightNoise | None = None,
        dtype: Any = np.float64,
    ) -> None:
        self.forward_cells = []
        self.backward_cells = []
        for layer in range(layers):
            layer_in = in_dim if layer == 0 else 2 * hidden
            self.forward_cells.append(LSTM(layer_in, hidden, rng, noise, dtype))
            self.backward_cells.append(LSTM(layer_in, hidden, rng, noise, dtype))

    @property
    def hidden(self) -> int:
        return self.forward_cells[0].hidden

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def __call__(self, x: Value) -> Value:
        out = x
        for fwd, bwd in zip(self.forward_cells, self.backward_cells):
            out = F.stack(bilstm_encode(out, fwd.weights(), bwd.weights()))
        return out


class FeedForward(Module):
    """Two fully connected tanh layers."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        noise: WeightNoise | None = None,
        dtype: Any = np.float64,
    ) -> None:
        self.hidden = Linear(in_dim, out_dim, rng, noise, dtype=dtype)
        self.output = Linear(out_dim, out_dim, rng, noise, dtype=dtype)

    def __call__(self, x: Value) -> Value:
        return F.tanh(self.output(F.tanh(self.hidden(x))))
