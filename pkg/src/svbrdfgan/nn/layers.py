"""Parameter-holding layers and He initialisation."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


def init_weights(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator,
                 dtype=np.float32) -> Tensor:
    """Zero-mean normal weights with std ``sqrt(2 / fan_in)``."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape: tuple[int, ...], dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Minimal container: parameters are Tensor attributes, children are Module attributes
    or lists of Modules.  Names follow attribute order, so they are stable."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int, pad: int, rng: np.random.Generator):
        self.weight = init_weights((cout, cin, k, k), cin * k * k, rng)
        self.bias = zeros_param((cout,))
        self.stride, self.pad = stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int, pad: int, rng: np.random.Generator):
        # each output pixel of a stride-s transposed conv sees cin * (k/s)^2 taps
        fan_in = max(1, cin * k * k // (stride * stride))
        self.weight = init_weights((cin, cout, k, k), fan_in, rng)
        self.bias = zeros_param((cout,))
        self.stride, self.pad = stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)


class InstanceNorm2d(Module):
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = zeros_param((channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.instance_norm(x, self.gamma, self.beta)
