"""Collocated-flash Cook-Torrance renderer with analytic parameter gradients.

Under collocation the half vector equals the light/view direction, so with
``c = n . w`` and ``a2 = roughness ** 4`` the per-pixel radiance is::

    L = I * c * diffuse / pi  +  I * specular * D(c, a2) * c / (c + q) ** 2
    D = a2 / (pi * (c^2 (a2 - 1) + 1)^2)          (GGX)
    q = sqrt(a2 + (1 - a2) c^2)

The second term is ``I * c * specular * D * G / (4 c^2)`` with the separable
Smith ``G = G1^2``, ``G1 = 2c / (c + q)``, simplified so the 1/c pole cancels.
Fresnel is the specular value itself because the half vector is the view
direction.  Pixels with ``c <= 0`` are black.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import LinearImage, linear_to_srgb, read_png, srgb_to_linear, write_png

ROUGHNESS_MIN = 0.01
NORMAL_Z_BIAS = 0.01
DEFAULT_INTENSITY = np.pi
MAP_NAMES = ("normal", "diffuse", "roughness", "specular")


@dataclass(frozen=True, eq=False)
class SvbrdfMaps:
    normal: np.ndarray     # H x W x 3, unit, z > 0
    diffuse: np.ndarray    # H x W x 3 in [0, 1]
    specular: np.ndarray   # H x W x 1 in [0, 1]
    roughness: np.ndarray  # H x W x 1 in [0.01, 1]

    @property
    def height(self) -> int:
        return self.normal.shape[0]

    @property
    def width(self) -> int:
        return self.normal.shape[1]

    def validate(self, tol: float = 1e-5) -> None:
        h, w = self.normal.shape[:2]
        for name, ch in (("normal", 3), ("diffuse", 3), ("specular", 1), ("roughness", 1)):
            arr = getattr(self, name)
            if arr.shape != (h, w, ch):
                raise ValueError(f"{name} map has shape {arr.shape}, expected {(h, w, ch)}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} map has non-finite values")
        norms = np.linalg.norm(self.normal.astype(np.float64), axis=-1)
        if np.any(np.abs(norms - 1) > tol) or np.any(self.normal[..., 2] <= 0):
            raise ValueError("normal map must hold unit vectors with positive z")
        for name, lo in (("diffuse", 0.0), ("specular", 0.0), ("roughness", ROUGHNESS_MIN)):
            arr = getattr(self, name)
            if np.any(arr < lo - tol) or np.any(arr > 1 + tol):
                raise ValueError(f"{name} map outside [{lo}, 1]")

    def crop(self, x: int, y: int, s: int) -> "SvbrdfMaps":
        return SvbrdfMaps(*(getattr(self, k)[y:y + s, x:x + s] for k in ("normal", "diffuse", "specular",
                                                                          "roughness")))

    def encoded(self) -> dict[str, np.ndarray]:
        """Maps in their [0, 1] storage encodings (normal as (n + 1) / 2)."""
        return {
            "normal": (self.normal + 1.0) / 2.0,
            "diffuse": self.diffuse,
            "roughness": self.roughness,
            "specular": self.specular,
        }

    @classmethod
    def constant(cls, height: int, width: int, diffuse=(0.5, 0.5, 0.5), specular: float = 0.0,
                 roughness: float = 0.5, normal=(0.0, 0.0, 1.0)) -> "SvbrdfMaps":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        full = lambda v, c: np.broadcast_to(np.asarray(v, np.float32), (height, width, c)).copy()
        return cls(full(n, 3), full(diffuse, 3), full(specular, 1), full(roughness, 1))


@dataclass(frozen=True)
class DirectionField:
    omega: np.ndarray  # H x W x 3 unit vectors toward the collocated camera/flash
    mode: str = "point"


@dataclass(frozen=True)
class MapGradients:
    normal: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray


def direction_field(width: int, height: int, camera_height: float = 1.0,
                    crop_origin: tuple[int, int] = (0, 0), full_size: tuple[int, int] | None = None,
                    center: tuple[float, float] = (0.0, 0.0), mode: str = "point") -> DirectionField:
    """Per-pixel unit direction from the surface toward a collocated camera/flash.

    The full frame spans a unit plane: pixel centres run from -0.5 to 0.5
    along the longer side.  The camera sits ``camera_height`` above
    ``center`` (plane units, relative to the frame centre).  ``crop_origin``
    places a ``width`` x ``height`` crop inside a frame of ``full_size``.
    """
    if mode == "distant":
        omega = np.zeros((height, width, 3), dtype=np.float64)
        omega[..., 2] = 1.0
        return DirectionField(omega, "distant")
    if mode != "point":
        raise ValueError(f"unknown direction mode {mode!r}")
    if camera_height <= 0:
        raise ValueError("camera_height must be positive")
    full_w, full_h = full_size if full_size is not None else (width, height)
    scale = max(max(full_w, full_h) - 1, 1)
    ox, oy = crop_origin
    xs = (np.arange(ox, ox + width) - (full_w - 1) / 2.0) / scale
    ys = (np.arange(oy, oy + height) - (full_h - 1) / 2.0) / scale
    px, py = np.meshgrid(xs, ys)
    vec = np.stack([center[0] - px, center[1] - py, np.full_like(px, camera_height)], axis=-1)
    return DirectionField(vec / np.linalg.norm(vec, axis=-1, keepdims=True), "point")


# -- shading core ------------------------------------------------------------------

def _terms(c, a2):
    u = c * c * (a2 - 1.0) + 1.0
    d = a2 / (np.pi * u * u)
    q = np.sqrt(a2 + (1.0 - a2) * c * c)
    k = c / (c + q) ** 2
    return u, d, q, k


def shade(normal_raw, diffuse, specular, roughness, omega, intensity=DEFAULT_INTENSITY):
    """Radiance for arrays with a trailing channel axis; ``normal_raw`` need not be unit."""
    n = normal_raw / np.linalg.norm(normal_raw, axis=-1, keepdims=True)
    c_raw = np.sum(n * omega, axis=-1, keepdims=True)
    lit = c_raw > 0
    c = np.where(lit, c_raw, 0.0)
    a2 = roughness ** 4
    _, d, _, k = _terms(c, a2)
    rad = intensity * (c * diffuse / np.pi + specular * d * k)
    return np.where(lit, rad, 0.0)


def shade_backward(normal_raw, diffuse, specular, roughness, omega, intensity, upstream):
    """Gradients of ``sum(upstream * shade(...))`` w.r.t. every shading input.

    Returns (g_normal_raw, g_diffuse, g_specular, g_roughness) with the
    shapes of the respective inputs.
    """
    norm = np.linalg.norm(normal_raw, axis=-1, keepdims=True)
    n = normal_raw / norm
    c_raw = np.sum(n * omega, axis=-1, keepdims=True)
    lit = c_raw > 0
    c = np.where(lit, c_raw, 0.0)
    r = roughness
    a2 = r ** 4
    u, d, q, k = _terms(c, a2)

    up = np.where(lit, upstream, 0.0)
    up_sum = up.sum(axis=-1, keepdims=True)

    dd_da2 = (u - 2.0 * a2 * c * c) / (np.pi * u ** 3)
    dd_dc = -4.0 * a2 * c * (a2 - 1.0) / (np.pi * u ** 3)
    dq_da2 = (1.0 - c * c) / (2.0 * q)
    dq_dc = (1.0 - a2) * c / q
    cq = c + q
    dk_dc = 1.0 / cq ** 2 - 2.0 * c * (1.0 + dq_dc) / cq ** 3
    dk_da2 = -2.0 * c * dq_da2 / cq ** 3

    g_diffuse = intensity * c / np.pi * up
    g_specular = intensity * d * k * up_sum
    g_roughness = intensity * specular * (dd_da2 * k + d * dk_da2) * 4.0 * r ** 3 * up_sum
    g_c = intensity * (np.sum(diffuse * up, axis=-1, keepdims=True) / np.pi
                       + specular * (dd_dc * k + d * dk_dc) * up_sum)
    g_normal = g_c * (omega - n * c_raw) / norm
    return g_normal, g_diffuse, g_specular, g_roughness


def render(maps: SvbrdfMaps, field: DirectionField, intensity: float = DEFAULT_INTENSITY) -> LinearImage:
    _check_field(maps, field)
    rad = shade(maps.normal.astype(np.float64), maps.diffuse.astype(np.float64),
                maps.specular.astype(np.float64), maps.roughness.astype(np.float64),
                field.omega, intensity)
    return LinearImage(rad.astype(np.float32))


def render_gradients(maps: SvbrdfMaps, field: DirectionField, intensity: float,
                     upstream: np.ndarray) -> MapGradients:
    """Chain an H x W x 3 image gradient back to the four maps.

    The normal gradient is w.r.t. the stored normal treated as a raw
    (pre-normalisation) vector.
    """
    _check_field(maps, field)
    g = shade_backward(maps.normal.astype(np.float64), maps.diffuse.astype(np.float64),
                       maps.specular.astype(np.float64), maps.roughness.astype(np.float64),
                       field.omega, intensity, np.asarray(upstream, dtype=np.float64))
    return MapGradients(*g)


def _check_field(maps: SvbrdfMaps, field: DirectionField) -> None:
    if field.omega.shape[:2] != maps.normal.shape[:2]:
        raise ValueError(f"direction field {field.omega.shape[:2]} does not match maps {maps.normal.shape[:2]}")


# -- raw generator output <-> maps --------------------------------------------------

def split_raw(raw):
    """Channel layout [normal xyz, roughness, diffuse rgb, specular] on the trailing axis."""
    return raw[..., 0:3], raw[..., 3:4], raw[..., 4:7], raw[..., 7:8]


def decode_raw(raw):
    """Arrays version of :func:`decode_maps`: returns (normal_vec, diffuse, specular, roughness).

    ``normal_vec`` is the unnormalised vector fed to the shader.
    """
    tn, tr, td, ts = split_raw(raw)
    vec = np.concatenate([tn[..., :2], (tn[..., 2:3] + 1.0) / 2.0 + NORMAL_Z_BIAS], axis=-1)
    diffuse = (td + 1.0) / 2.0
    specular = (ts + 1.0) / 2.0
    roughness = np.clip((tr + 1.0) / 2.0, ROUGHNESS_MIN, 1.0)
    return vec, diffuse, specular, roughness


def decode_raw_backward(raw, g_vec, g_diffuse, g_specular, g_roughness):
    """Pull map gradients back to the raw channels (clamp has zero slope outside its range)."""
    tr = raw[..., 3:4]
    r_lin = (tr + 1.0) / 2.0
    inside = (r_lin >= ROUGHNESS_MIN) & (r_lin <= 1.0)
    return np.concatenate([
        g_vec[..., 0:2],
        0.5 * g_vec[..., 2:3],
        np.where(inside, 0.5 * g_roughness, 0.0),
        0.5 * g_diffuse,
        0.5 * g_specular,
    ], axis=-1)


def decode_maps(raw: np.ndarray) -> SvbrdfMaps:
    """H x W x 8 tanh outputs in [-1, 1] -> valid SvbrdfMaps."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != 8:
        raise ValueError(f"raw maps need 8 channels, got {raw.shape[-1]}")
    vec, diffuse, specular, roughness = decode_raw(raw)
    normal = vec / np.linalg.norm(vec, axis=-1, keepdims=True)
    return SvbrdfMaps(normal.astype(np.float32), diffuse.astype(np.float32),
                      specular.astype(np.float32), roughness.astype(np.float32))


# -- storage -----------------------------------------------------------------------

def save_maps(maps: SvbrdfMaps, stem: str | Path) -> dict[str, Path]:
    """Write <stem>_normal/_diffuse/_roughness/_specular.png.

    Diffuse is sRGB encoded; normal ((n + 1) / 2), roughness and specular are
    stored as plain [0, 1] values.
    """
    stem = Path(stem)
    enc = maps.encoded()
    paths = {}
    for name in MAP_NAMES:
        path = stem.parent / f"{stem.name}_{name}.png"
        values = linear_to_srgb(enc[name]) if name == "diffuse" else enc[name]
        write_png(values, path)
        paths[name] = path
    return paths


def load_maps(stem: str | Path) -> SvbrdfMaps:
    stem = Path(stem)
    get = lambda name: read_png(stem.parent / f"{stem.name}_{name}.png")
    n = get("normal") * 2.0 - 1.0
    n[..., 2] = np.maximum(n[..., 2], 1e-3)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    diffuse = srgb_to_linear(get("diffuse"))
    rough = np.clip(get("roughness")[..., :1], ROUGHNESS_MIN, 1.0)
    spec = get("specular")[..., :1]
    return SvbrdfMaps(n.astype(np.float32), diffuse.astype(np.float32), spec.astype(np.float32),
                      rough.astype(np.float32))
