"""Synthetic ground truth, a per-pixel inverse-rendering baseline, and RMSE reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import brdf
from .brdf import DirectionField, SvbrdfMaps
from .imaging import LinearImage
from .nn import Adam, Tensor, clip, mse, tanh, total_variation
from .render_op import hwc, nchw, render_raw

REPORT_COLUMNS = ("diffuse", "specular", "roughness", "normal", "guessed_diffuse")
REFERENCE_ROW = {"label": "published reference, set 4", "diffuse": 0.085, "specular": 0.208,
                 "roughness": 0.451, "normal": 0.143, "guessed_diffuse": 0.071}


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"rmse: shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# -- synthetic data --------------------------------------------------------------

def grid_offsets(k: int = 9, spread: float = 0.3) -> list[tuple[float, float]]:
    """Camera positions on a square grid of ``k`` points (k must be a square)."""
    side = int(round(np.sqrt(k)))
    if side * side != k:
        raise ValueError("k must be a perfect square")
    if side == 1:
        return [(0.0, 0.0)]
    ticks = np.linspace(-spread, spread, side)
    return [(float(x), float(y)) for y in ticks for x in ticks]


def glossy_fixture(size: int = 64, seed: int = 0, specular: float = 0.6, roughness: float = 0.25,
                   bump: float = 0.15) -> SvbrdfMaps:
    """Textured diffuse, uniform glossy specular, gently bumped normals."""
    rng = np.random.default_rng(seed)
    tex = ndimage.gaussian_filter(rng.random((size, size, 3)), sigma=(3, 3, 0))
    tex = (tex - tex.min()) / (np.ptp(tex) + 1e-12)
    diffuse = 0.15 + 0.5 * tex
    slopes = ndimage.gaussian_filter(rng.normal(size=(size, size, 2)), sigma=(4, 4, 0))
    slopes *= bump / (np.abs(slopes).max() + 1e-12)
    n = np.concatenate([slopes, np.ones((size, size, 1))], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return SvbrdfMaps(n.astype(np.float32), diffuse.astype(np.float32),
                      np.full((size, size, 1), specular, np.float32),
                      np.full((size, size, 1), roughness, np.float32))


def diffuse_only(maps: SvbrdfMaps) -> SvbrdfMaps:
    return SvbrdfMaps(maps.normal, maps.diffuse, np.zeros_like(maps.specular), maps.roughness)


def diffuse_only_render(maps: SvbrdfMaps, camera_height: float = 1.0, intensity: float = brdf.DEFAULT_INTENSITY,
                        mode: str = "point") -> LinearImage:
    """Specular-free render from the centred camera: what a guessed diffuse map should approach."""
    field = brdf.direction_field(maps.width, maps.height, camera_height, mode=mode)
    return brdf.render(diffuse_only(maps), field, intensity)


def view_fields(width: int, height: int, lateral_offsets: Sequence[tuple[float, float]],
                camera_height: float = 1.0, mode: str = "point") -> list[DirectionField]:
    return [brdf.direction_field(width, height, camera_height, center=tuple(off), mode=mode)
            for off in lateral_offsets]


def synth_views(gt: SvbrdfMaps, k: int | None = None, lateral_offsets=None, camera_height: float = 1.0,
                intensity: float = brdf.DEFAULT_INTENSITY, noise_sigma: float = 0.0, seed: int = 0,
                mode: str = "point") -> list[LinearImage]:
    """Render ``gt`` once per camera offset (co-registered by construction).

    Sensor noise is Gaussian with ``noise_sigma``; results are clamped to [0, 1].
    """
    if lateral_offsets is None:
        lateral_offsets = grid_offsets(k or 9)
    if k is not None and k != len(lateral_offsets):
        raise ValueError(f"k={k} but {len(lateral_offsets)} offsets given")
    rng = np.random.default_rng(seed)
    views = []
    for field_ in view_fields(gt.width, gt.height, lateral_offsets, camera_height, mode):
        img = brdf.render(gt, field_, intensity).data.astype(np.float64)
        if noise_sigma > 0:
            img = img + rng.normal(0.0, noise_sigma, size=img.shape)
        views.append(LinearImage(np.clip(img, 0.0, 1.0).astype(np.float32)))
    return views


# -- direct per-pixel fit -----------------------------------------------------------

@dataclass
class FitResult:
    maps: SvbrdfMaps
    losses: list[float] = field(default_factory=list)


def maps_to_unconstrained(maps: SvbrdfMaps) -> np.ndarray:
    """Inverse of tanh + decoding for a valid map set (H x W x 8)."""
    n = maps.normal.astype(np.float64)
    # decoded normal is normalize((tx, ty, (tz + 1) / 2 + 0.01)); pick the scale that puts tz in range
    largest_xy = np.maximum(np.abs(n[..., :2]).max(-1, keepdims=True), 1e-9)
    scale = np.clip(0.5 / np.maximum(n[..., 2:3], 1e-3), None, 0.99 / largest_xy)
    v = n * scale
    tz = 2.0 * (v[..., 2:3] - brdf.NORMAL_Z_BIAS) - 1.0
    raw = np.concatenate([v[..., :2], tz, 2.0 * maps.roughness - 1.0, 2.0 * maps.diffuse - 1.0,
                          2.0 * maps.specular - 1.0], axis=-1)
    return np.arctanh(np.clip(raw, -0.999, 0.999))


def direct_fit(photos: Sequence[LinearImage], fields: Sequence[DirectionField], iters: int = 2000,
               lr: float = 0.02, smoothness_weight: float = 1e-3, intensity: float = brdf.DEFAULT_INTENSITY,
               seed: int = 0, init: np.ndarray | None = None, init_noise: float = 0.0,
               tol: float = 1e-12) -> FitResult:
    """Per-pixel inverse rendering by Adam on unconstrained parameters.

    Parameters pass through tanh and the generator's decoding, so the result
    always satisfies the map invariants.  The objective is the mean squared
    render error over all views (renders clipped to the [0, 1] sensor
    range) plus ``smoothness_weight`` times the total variation of the
    squashed maps.  The loop stops early once the objective is at or below
    ``tol``: Adam would otherwise turn float rounding residue into full-size
    steps away from an exact solution.
    """
    if not photos or len(photos) != len(fields):
        raise ValueError("need one direction field per photo (and at least one photo)")
    h, w = photos[0].height, photos[0].width
    target = Tensor(np.concatenate([nchw(p.to_rgb().data) for p in photos], axis=0).astype(np.float64))
    omega = np.stack([f.omega for f in fields])

    if init is None:
        u0 = np.zeros((1, 8, h, w))
        if init_noise > 0:
            u0 += np.random.default_rng(seed).normal(0.0, init_noise, size=u0.shape)
    else:
        u0 = np.asarray(init, dtype=np.float64).transpose(2, 0, 1)[None].copy()
    u = Tensor(u0, requires_grad=True)
    opt = Adam([u], lr, betas=(0.9, 0.999))
    losses = []
    for _ in range(iters):
        u.grad = None
        raw = tanh(u)
        # the photos saw a sensor that saturates at 1
        loss = mse(clip(render_raw(raw, omega, intensity), 0.0, 1.0), target)
        if smoothness_weight:
            loss = loss + total_variation(raw) * smoothness_weight
        val = loss.item()
        if not np.isfinite(val):
            raise FloatingPointError("direct_fit loss became non-finite")
        losses.append(val)
        if val <= tol:
            break
        loss.backward()
        opt.step()
    final = np.tanh(u.data)
    return FitResult(brdf.decode_maps(hwc(final)), losses)


# -- reports ---------------------------------------------------------------------

@dataclass
class EvalReport:
    label: str
    diffuse: float
    specular: float
    roughness: float
    normal: float
    guessed_diffuse: float | None = None

    def values(self) -> dict[str, float | None]:
        return {c: getattr(self, c) for c in REPORT_COLUMNS}

    def csv_header(self) -> str:
        return "method," + ",".join(REPORT_COLUMNS)

    def csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(
            [self.label] + ["" if v is None else f"{v:.6f}" for v in self.values().values()])
        return buf.getvalue()

    def table(self, with_reference: bool = True) -> str:
        heads = ["Method", "Diffuse", "Specular", "Roughness", "Normal", "Guessed Diffuse"]
        rows = [[self.label] + ["-" if v is None else f"{v:.3f}" for v in self.values().values()]]
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(heads)]
        fmt = lambda cells: "  ".join(c.ljust(wd) if i == 0 else c.rjust(wd)
                                      for i, (c, wd) in enumerate(zip(cells, widths)))
        lines = ["# RMSE per map over [0,1] encodings; normals as (n+1)/2",
                 fmt(heads), fmt(["-" * wd for wd in widths])]
        lines += [fmt(r) for r in rows]
        if with_reference:
            ref = REFERENCE_ROW
            lines.append("# context only, not a target: " + ref["label"] + ": "
                         + ", ".join(f"{c} {ref[c]:.3f}" for c in REPORT_COLUMNS))
        return "\n".join(lines)


def report(estimated: SvbrdfMaps, gt: SvbrdfMaps, guessed_diffuse: LinearImage | np.ndarray | None = None,
           label: str = "ours") -> EvalReport:
    e, g = estimated.encoded(), gt.encoded()
    guessed = None
    if guessed_diffuse is not None:
        gd = guessed_diffuse.data if isinstance(guessed_diffuse, LinearImage) else guessed_diffuse
        guessed = rmse(np.clip(gd, 0.0, 1.0), g["diffuse"])
    return EvalReport(label, rmse(e["diffuse"], g["diffuse"]), rmse(e["specular"], g["specular"]),
                      rmse(e["roughness"], g["roughness"]), rmse(e["normal"], g["normal"]), guessed)
