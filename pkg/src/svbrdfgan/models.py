"""Generator (shared encoder, two decoders) and patch discriminator."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .nn import ops
from .nn.layers import Conv2d, ConvTranspose2d, InstanceNorm2d, Module
from .nn.serialize import CheckpointError, CheckpointShapeError, load_tensors, save_tensors
from .nn.tensor import Tensor, concat

LEAKY_SLOPE = 0.2
FORMAT_KIND = "svbrdfgan/gan"


class Block(Module):
    """Convolution (or transposed convolution) + optional instance norm + activation."""

    def __init__(self, conv: Module, channels: int, norm: bool, act: str):
        self.conv = conv
        self.norm = InstanceNorm2d(channels) if norm else None
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        if self.norm is not None:
            y = self.norm(y)
        if self.act == "lrelu":
            return ops.leaky_relu(y, LEAKY_SLOPE)
        if self.act == "tanh":
            return ops.tanh(y)
        if self.act == "sigmoid":
            return ops.sigmoid(y)
        return y


def _down(cin, cout, rng, norm=True, act="lrelu"):
    return Block(Conv2d(cin, cout, 4, 2, 1, rng), cout, norm, act)


def _same(cin, cout, rng, norm=True, act="lrelu"):
    return Block(Conv2d(cin, cout, 3, 1, 1, rng), cout, norm, act)


def _up(cin, cout, rng, norm=True, act="lrelu"):
    return Block(ConvTranspose2d(cin, cout, 4, 2, 1, rng), cout, norm, act)


class Sequential(Module):
    def __init__(self, blocks: list[Module]):
        self.blocks = blocks

    def __call__(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x


class Generator(Module):
    """Encoder 3->b->2b->4b->8b->8b (strides 1,2,2,2,1).

    ``dec_nr`` emits [normal xyz, roughness], ``dec_pdp`` emits
    [diffuse rgb, specular]; both read the same latent.
    """

    def __init__(self, base_channels: int = 64, seed: int = 0):
        b = base_channels
        rng = np.random.default_rng([seed, 1])
        self.base_channels = b
        self.encoder = Sequential([
            _same(3, b, rng),
            _down(b, 2 * b, rng),
            _down(2 * b, 4 * b, rng),
            _down(4 * b, 8 * b, rng),
            _same(8 * b, 8 * b, rng),
        ])
        self.dec_nr = Sequential([
            _same(8 * b, 8 * b, rng),
            _up(8 * b, 4 * b, rng),
            _up(4 * b, 2 * b, rng),
            _up(2 * b, 4, rng, norm=False, act="tanh"),
        ])
        self.dec_pdp = Sequential([
            _up(8 * b, 4 * b, rng),
            _up(4 * b, 2 * b, rng),
            _up(2 * b, 4, rng, norm=False, act="tanh"),
        ])

    def __call__(self, x: Tensor) -> Tensor:
        """(N,3,S,S) image in [0,1] -> (N,8,S,S) raw maps in (-1,1)."""
        _check_size(x.shape, 8, "generator")
        latent = self.encoder(x * 2.0 - 1.0)
        return concat([self.dec_nr(latent), self.dec_pdp(latent)], axis=1)

    def encode(self, x: Tensor) -> Tensor:
        _check_size(x.shape, 8, "generator")
        return self.encoder(x * 2.0 - 1.0)


class Discriminator(Module):
    """Five stride-2 convolutions 3->b->2b->4b->8b->1 ending in a sigmoid patch map."""

    def __init__(self, base_channels: int = 64, seed: int = 0):
        b = base_channels
        rng = np.random.default_rng([seed, 2])
        self.base_channels = b
        self.net = Sequential([
            _down(3, b, rng),
            _down(b, 2 * b, rng),
            _down(2 * b, 4 * b, rng),
            _down(4 * b, 8 * b, rng),
            _down(8 * b, 1, rng, norm=False, act="sigmoid"),
        ])

    def __call__(self, x: Tensor) -> Tensor:
        """(N,3,S,S) image in [0,1] -> (N,1,S/32,S/32) scores in (0,1)."""
        _check_size(x.shape, 32, "discriminator")
        return self.net(x * 2.0 - 1.0)


def _check_size(shape, multiple: int, who: str) -> None:
    if len(shape) != 4 or shape[1] != 3:
        raise ValueError(f"{who}: expected (N,3,S,S) input, got {tuple(shape)}")
    h, w = shape[2], shape[3]
    if h % multiple or w % multiple or min(h, w) < 32:
        raise ValueError(f"{who}: spatial size {h}x{w} must be >= 32 and a multiple of {multiple}")


def generator_forward(g: Generator, patch: np.ndarray) -> np.ndarray:
    """Run the generator on one HxWx3 image; returns HxWx8 raw maps."""
    from .nn.tensor import no_grad

    x = Tensor(np.ascontiguousarray(patch.transpose(2, 0, 1)[None], dtype=np.float32))
    with no_grad():
        out = g(x)
    return out.data[0].transpose(1, 2, 0)


def discriminator_forward(d: Discriminator, img: np.ndarray) -> np.ndarray:
    from .nn.tensor import no_grad

    x = Tensor(np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=np.float32))
    with no_grad():
        out = d(x)
    return out.data[0].transpose(1, 2, 0)


# -- checkpoints ----------------------------------------------------------------

def _arch(g: Generator, d: Discriminator) -> dict:
    return {"generator_base_channels": g.base_channels,
            "discriminator_base_channels": d.base_channels,
            "leaky_slope": LEAKY_SLOPE}


def network_arrays(g: Generator, d: Discriminator) -> dict[str, np.ndarray]:
    out = {f"G.{k}": p.data for k, p in g.named_parameters()}
    out.update({f"D.{k}": p.data for k, p in d.named_parameters()})
    return out


def save_checkpoint(g: Generator, d: Discriminator, path: str | Path,
                    extra: dict[str, np.ndarray] | None = None, state: dict | None = None) -> None:
    """Write network weights (plus optional optimiser arrays and resume state)."""
    tensors = network_arrays(g, d)
    if extra:
        tensors.update({f"X.{k}": v for k, v in extra.items()})
    meta = {"kind": FORMAT_KIND, "arch": _arch(g, d)}
    if state is not None:
        meta["state"] = state
    save_tensors(path, tensors, meta)


def load_checkpoint(path: str | Path, with_extra: bool = False):
    """Rebuild (Generator, Discriminator) from a checkpoint.

    With ``with_extra`` also returns the extra arrays and resume state.
    """
    tensors, meta = load_tensors(path)
    if meta.get("kind") != FORMAT_KIND:
        raise CheckpointError(f"{path}: not a GAN checkpoint (kind={meta.get('kind')!r})")
    arch = meta["arch"]
    g = Generator(arch["generator_base_channels"])
    d = Discriminator(arch["discriminator_base_channels"])
    for prefix, net in (("G.", g), ("D.", d)):
        for name, p in net.named_parameters():
            key = prefix + name
            if key not in tensors:
                raise CheckpointShapeError(f"{path}: missing tensor {key!r}")
            arr = tensors[key]
            if arr.shape != p.data.shape:
                raise CheckpointShapeError(
                    f"{path}: tensor {key!r} has shape {arr.shape}, architecture expects {p.data.shape}")
            p.data = arr.astype(np.float32, copy=False)
    if not with_extra:
        return g, d
    extra = {k[2:]: v for k, v in tensors.items() if k.startswith("X.")}
    return g, d, extra, meta.get("state")
