"""Minimal reverse-mode autodiff, feed-forward nets and training loop.

Everything is float64 numpy under the hood.  The public surface is:

- Tensor, gradcheck            (tensor.py)
- MLP, BatchNorm               (net.py)
- AdamState, adam_step         (optim.py)
- TrainConfig, TrainReport, train  (train.py)
"""

from .tensor import Tensor, as_tensor, gradcheck
from .net import MLP, ACTIVATIONS
from .optim import AdamState, adam_step
from .train import TrainConfig, TrainReport, train, flatten_params, flatten_grads, scatter_params

__all__ = [
    "Tensor",
    "as_tensor",
    "gradcheck",
    "MLP",
    "ACTIVATIONS",
    "AdamState",
    "adam_step",
    "TrainConfig",
    "TrainReport",
    "train",
    "flatten_params",
    "flatten_grads",
    "scatter_params",
]
