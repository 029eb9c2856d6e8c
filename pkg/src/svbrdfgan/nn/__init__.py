"""Small numpy autodiff engine: tensors, conv layers, instance norm, losses, Adam."""

from .layers import Conv2d, ConvTranspose2d, InstanceNorm2d, Module, init_weights
from .ops import (bce, clip, conv2d, conv_transpose2d, instance_norm, l1, leaky_relu, mse, sigmoid, tanh,
                  total_variation)
from .optim import SGD, Adam, AdamState, adam_step
from .serialize import (CheckpointError, CheckpointShapeError, CheckpointTruncatedError,
                        CheckpointVersionError, load_tensors, save_tensors)
from .tensor import GraphReleasedError, Tensor, concat, no_grad

__all__ = [
    "Adam", "AdamState", "CheckpointError", "CheckpointShapeError", "CheckpointTruncatedError",
    "CheckpointVersionError", "Conv2d", "ConvTranspose2d", "GraphReleasedError", "InstanceNorm2d",
    "Module", "SGD", "Tensor", "adam_step", "bce", "clip", "concat", "conv2d", "conv_transpose2d",
    "init_weights", "instance_norm", "l1", "leaky_relu", "load_tensors", "mse", "no_grad",
    "save_tensors", "sigmoid", "tanh", "total_variation",
]
