"""Dense float64 layers with hand-written reverse-mode gradients."""

from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .functional import (
    BACKWARD,
    FORWARD,
    bilstm_backward,
    bilstm_forward,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    lstm_backward,
    lstm_forward,
    mse_loss,
)
from .gradcheck import GradCheckReport, gradient_check
from .layers import BiLstm, Conv1d, Dense, FinalState, Flatten, Layer, Lstm, Parameter, Sequential
from .optim import Adam, adam_step

__all__ = [
    "Adam", "BACKWARD", "BiLstm", "Conv1d", "Dense", "FORWARD", "FinalState", "Flatten",
    "GradCheckReport", "Layer", "Lstm", "Parameter", "Sequential", "adam_step",
    "bilstm_backward", "bilstm_forward", "conv1d_backward", "conv1d_forward",
    "decode_checkpoint", "dense_backward", "dense_forward", "encode_checkpoint",
    "gradient_check", "load_checkpoint", "lstm_backward", "lstm_forward", "mse_loss",
    "save_checkpoint",
]
