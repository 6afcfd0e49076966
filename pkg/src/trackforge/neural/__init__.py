from .layers import lstm_cell_forward, lstm_layer_forward, lstm_layer_backward, softmax, sigmoid
from .losses import cross_entropy_loss, mse_loss, softmax_cross_entropy
from .network import AssocNet, RecurrentNet
from .optim import AdamState, adam_step, clip_global_norm
from .serialize import load_weights, save_weights

__all__ = [
    "AdamState", "AssocNet", "RecurrentNet", "adam_step", "clip_global_norm", "cross_entropy_loss",
    "load_weights", "lstm_cell_forward", "lstm_layer_backward", "lstm_layer_forward", "mse_loss",
    "save_weights", "sigmoid", "softmax", "softmax_cross_entropy",
]
