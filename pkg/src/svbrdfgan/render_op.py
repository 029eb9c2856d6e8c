"""Renderer and map decoding as nodes on the autodiff tape."""

from __future__ import annotations

import numpy as np

from . import brdf
from .nn.tensor import Tensor


def render_raw(raw: Tensor, omega: np.ndarray, intensity: float = brdf.DEFAULT_INTENSITY) -> Tensor:
    """Decode (N,8,H,W) raw maps and render them to (N,3,H,W) radiance.

    ``omega`` is (N or 1, H, W, 3).  The backward pass is the analytic
    renderer gradient chained through the decoding.
    """
    t = raw.data.transpose(0, 2, 3, 1).astype(np.float64)
    vec, diffuse, specular, roughness = brdf.decode_raw(t)
    rad = brdf.shade(vec, diffuse, specular, roughness, omega, intensity)
    out = np.ascontiguousarray(rad.transpose(0, 3, 1, 2)).astype(raw.dtype)

    def backward(g):
        up = g.transpose(0, 2, 3, 1).astype(np.float64)
        gv, gd, gs, gr = brdf.shade_backward(vec, diffuse, specular, roughness, omega, intensity, up)
        graw = brdf.decode_raw_backward(t, gv, gd, gs, gr)
        if graw.shape[0] != t.shape[0]:
            graw = graw.sum(axis=0, keepdims=True)
        return (np.ascontiguousarray(graw.transpose(0, 3, 1, 2)).astype(raw.dtype),)

    return Tensor._from_op(out, (raw,), backward)


def raw_diffuse(raw: Tensor) -> Tensor:
    """Diffuse albedo (N,3,H,W) from raw generator output."""
    return (raw[:, 4:7] + 1.0) * 0.5


def nchw(img: np.ndarray) -> np.ndarray:
    """H x W x C -> 1 x C x H x W float32."""
    return np.ascontiguousarray(np.asarray(img, dtype=np.float32).transpose(2, 0, 1)[None])


def hwc(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t[0].transpose(1, 2, 0))
