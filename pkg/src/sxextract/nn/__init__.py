"""Differentiable computation core.

Numpy-backed reverse-mode arrays, LSTM/dense building blocks, Adam,
finite-difference gradient checks and parameter checkpoints.
"""

from sxextract.nn.checkpoint import load_parameters, read_checkpoint, save_checkpoint
from sxextract.nn.gradcheck import GradCheckReport, grad_check
from sxextract.nn.layers import (
    BiLSTM,
    Embedding,
    FeedForward,
    Linear,
    LSTM,
    LSTMWeights,
    Module,
    WeightNoise,
    bilstm_encode,
    lstm_cell,
)
from sxextract.nn.optim import Adam, OptimizerState, adam_step
from sxextract.nn.value import Value, no_grad

__all__ = [
    "Adam",
    "BiLSTM",
    "Embedding",
    "FeedForward",
    "GradCheckReport",
    "LSTM",
    "LSTMWeights",
    "Linear",
    "Module",
    "OptimizerState",
    "Value",
    "WeightNoise",
    "adam_step",
    "bilstm_encode",
    "grad_check",
    "load_parameters",
    "lstm_cell",
    "no_grad",
    "read_checkpoint",
    "save_checkpoint",
]
