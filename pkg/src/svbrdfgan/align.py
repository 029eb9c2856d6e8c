"""Multi-view alignment and guessed-diffuse extraction by min-compositing.

Specular reflection only adds radiance on top of the Lambertian floor, so
after aligning the photos to the first one, the per-pixel minimum over the
set is an estimate of the diffuse-only image.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .imaging import LinearImage

log = logging.getLogger(__name__)

DESC_GRID = 8
DESC_SPACING = 2.0
_BORDER = int(np.ceil((DESC_GRID - 1) / 2 * DESC_SPACING)) + 2


class AlignmentError(RuntimeError):
    """A photo could not be registered to the reference."""


@dataclass(frozen=True)
class Feature:
    x: float
    y: float
    descriptor: np.ndarray
    response: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map in (column, row) pixel-centre coordinates."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64).reshape(3, 3)
        if abs(h[2, 2]) > 1e-15:
            h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-12:
            raise AlignmentError("homography is singular")
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=np.float64))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return _project(self.h, np.asarray(pts, dtype=np.float64))

    def save(self, path: str | Path) -> None:
        np.savetxt(path, self.h, fmt="%.17g")

    @classmethod
    def load(cls, path: str | Path) -> "Homography":
        return cls(np.loadtxt(path))


@dataclass(frozen=True)
class MaskedImage:
    image: LinearImage
    valid: np.ndarray  # H x W bool


@dataclass
class AlignParams:
    ratio: float = 0.8
    inlier_px: float = 2.0
    iters: int = 2000
    min_inliers: int = 12
    max_features: int = 1000
    seed: int = 0
    exposure_normalize: bool = True


# -- features ------------------------------------------------------------------------

def _gray(img: LinearImage) -> np.ndarray:
    return img.luminance().astype(np.float64)


def harris_response(gray: np.ndarray, sigma: float = 1.5, k: float = 0.04) -> np.ndarray:
    ix = ndimage.sobel(gray, axis=1, mode="reflect")
    iy = ndimage.sobel(gray, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(ix * ix, sigma)
    syy = ndimage.gaussian_filter(iy * iy, sigma)
    sxy = ndimage.gaussian_filter(ix * iy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_features(img: LinearImage, max_features: int = 1000, threshold_rel: float = 0.01,
                    nms_radius: int = 4) -> list[Feature]:
    """Harris corners with greedy non-max suppression and 8x8 normalised patch descriptors."""
    gray = _gray(img)
    h, w = gray.shape
    if h <= 2 * _BORDER or w <= 2 * _BORDER:
        return []
    resp = harris_response(gray)
    peak = resp.max()
    if not np.isfinite(peak) or peak <= 1e-12:
        return []
    local_max = resp == ndimage.maximum_filter(resp, size=3, mode="nearest")
    cand = local_max & (resp > threshold_rel * peak)
    cand[:_BORDER] = cand[-_BORDER:] = False
    cand[:, :_BORDER] = cand[:, -_BORDER:] = False
    ys, xs = np.nonzero(cand)
    order = np.lexsort((xs, ys, -resp[ys, xs]))

    taken = np.zeros_like(cand)
    keep: list[tuple[int, int]] = []
    for i in order:
        y, x = ys[i], xs[i]
        if taken[y, x]:
            continue
        keep.append((y, x))
        taken[max(0, y - nms_radius):y + nms_radius + 1, max(0, x - nms_radius):x + nms_radius + 1] = True
        if len(keep) >= max_features:
            break

    smooth = ndimage.gaussian_filter(gray, 1.0)
    offs = (np.arange(DESC_GRID) - (DESC_GRID - 1) / 2.0) * DESC_SPACING
    feats = []
    for y, x in keep:
        fx = x + _subpixel(resp[y, x - 1], resp[y, x], resp[y, x + 1])
        fy = y + _subpixel(resp[y - 1, x], resp[y, x], resp[y + 1, x])
        gy, gx = np.meshgrid(fy + offs, fx + offs, indexing="ij")
        patch = ndimage.map_coordinates(smooth, [gy.ravel(), gx.ravel()], order=1, mode="nearest")
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm < 1e-9:
            continue
        feats.append(Feature(float(fx), float(fy), patch / norm, float(resp[y, x])))
    return feats


def _subpixel(a: float, b: float, c: float) -> float:
    denom = a - 2 * b + c
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))


def match_features(a: Sequence[Feature], b: Sequence[Feature], ratio: float = 0.8) -> list[tuple[int, int]]:
    """Nearest neighbour in descriptor space, kept only if it beats the runner-up by ``ratio``."""
    if not a or not b:
        return []
    da = np.stack([f.descriptor for f in a])
    db = np.stack([f.descriptor for f in b])
    d2 = (da * da).sum(1)[:, None] + (db * db).sum(1)[None, :] - 2.0 * da @ db.T
    dist = np.sqrt(np.maximum(d2, 0.0))
    pairs = []
    for i in range(len(a)):
        row = dist[i]
        if len(b) == 1:
            pairs.append((i, 0))
            continue
        j1, j2 = np.argpartition(row, 1)[:2]
        if row[j2] < row[j1]:
            j1, j2 = j2, j1
        if row[j1] < ratio * row[j2]:
            pairs.append((i, int(j1)))
    return pairs


# -- homography estimation -----------------------------------------------------------

def _project(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    hom = pts @ h[:2, :2].T + h[:2, 2]
    den = pts @ h[2, :2] + h[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return hom / den[..., None]


def _normalizer(pts: np.ndarray) -> np.ndarray:
    mean = pts.mean(axis=0)
    spread = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / spread if spread > 0 else 1.0
    return np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    r1 = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=-1)
    r2 = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=-1)
    return np.concatenate([r1, r2], axis=-2)


def fit_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalised direct linear transform mapping ``src`` onto ``dst`` (N >= 4)."""
    ts, td = _normalizer(src), _normalizer(dst)
    a = _dlt_rows(_project(ts, src), _project(td, dst))
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    return h / h[2, 2]


def _degenerate(quads: np.ndarray, tol: float) -> np.ndarray:
    bad = np.zeros(quads.shape[0], dtype=bool)
    for i, j, k in combinations(range(4), 3):
        p, q, r = quads[:, i], quads[:, j], quads[:, k]
        cross = (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0])
        bad |= np.abs(cross) <= tol
    return bad


def symmetric_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Larger of the forward and backward transfer distances per correspondence."""
    try:
        hinv = np.linalg.inv(h)
    except np.linalg.LinAlgError:
        return np.full(len(src), np.inf)
    fwd = np.linalg.norm(_project(h, src) - dst, axis=-1)
    bwd = np.linalg.norm(_project(hinv, dst) - src, axis=-1)
    err = np.maximum(fwd, bwd)
    return np.where(np.isfinite(err), err, np.inf)


def estimate_homography_ransac(src, dst, inlier_px: float = 2.0, iters: int = 2000,
                               rng: np.random.Generator | int | None = 0):
    """Robustly fit the homography taking ``src`` points onto ``dst`` points.

    Returns ``(Homography, inlier_indices)``.  Minimal samples with three
    collinear points are skipped; the winning model is refit on all its
    inliers with the normalised DLT.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise AlignmentError(f"need at least 4 correspondences, got {n}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    samples = np.stack([rng.choice(n, size=4, replace=False) for _ in range(iters)])
    scale = max(np.ptp(src, axis=0).max(), np.ptp(dst, axis=0).max(), 1.0)
    tol = 1e-6 * scale * scale
    ok = ~(_degenerate(src[samples], tol) | _degenerate(dst[samples], tol))
    samples = samples[ok]
    if len(samples) == 0:
        raise AlignmentError("every minimal sample was degenerate")

    ts, td = _normalizer(src), _normalizer(dst)
    ns, nd = _project(ts, src), _project(td, dst)
    a = _dlt_rows(ns[samples], nd[samples])
    _, _, vt = np.linalg.svd(a)
    hn = vt[:, -1].reshape(-1, 3, 3)
    hs = np.linalg.inv(td)[None] @ hn @ ts[None]

    best_count, best_cost, best = -1, np.inf, None
    for h in hs:
        if not np.all(np.isfinite(h)) or abs(np.linalg.det(h)) < 1e-12:
            continue
        err = symmetric_error(h, src, dst)
        inl = err <= inlier_px
        count = int(inl.sum())
        cost = float(err[inl].sum())
        if count > best_count or (count == best_count and cost < best_cost):
            best_count, best_cost, best = count, cost, inl
    if best is None or best_count < 4:
        raise AlignmentError("RANSAC found no model with four inliers")

    inliers = best
    for _ in range(3):
        h = fit_homography(src[inliers], dst[inliers])
        new = symmetric_error(h, src, dst) <= inlier_px
        if new.sum() < 4 or np.array_equal(new, inliers):
            break
        inliers = new
    h = fit_homography(src[inliers], dst[inliers])
    return Homography(h), np.flatnonzero(inliers)


# -- warping and compositing ---------------------------------------------------------

def warp_to_reference(img: LinearImage, h: Homography,
                      out_size: tuple[int, int] | None = None) -> MaskedImage:
    """Resample ``img`` into the reference frame, where ``h`` maps image -> reference.

    Pixels whose preimage falls outside the source are marked invalid and zeroed.
    """
    out_w, out_h = out_size if out_size is not None else (img.width, img.height)
    hinv = np.linalg.inv(h.h)
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    src = _project(hinv, np.stack([xs, ys], axis=-1))
    sx, sy = src[..., 0], src[..., 1]
    eps = 1e-9
    valid = (sx >= -eps) & (sx <= img.width - 1 + eps) & (sy >= -eps) & (sy <= img.height - 1 + eps)
    valid &= np.isfinite(sx) & np.isfinite(sy)
    sx = np.where(valid, sx, 0.0)
    sy = np.where(valid, sy, 0.0)
    out = np.empty((out_h, out_w, img.channels), dtype=np.float32)
    for ch in range(img.channels):
        out[..., ch] = ndimage.map_coordinates(img.data[..., ch].astype(np.float64), [sy, sx],
                                               order=1, mode="nearest")
    out[~valid] = 0.0
    return MaskedImage(LinearImage(np.maximum(out, 0.0)), valid)


def _median_luminance(m: MaskedImage) -> float:
    lum = m.image.luminance()[m.valid]
    return float(np.median(lum)) if lum.size else 0.0


def min_composite(images: Sequence[MaskedImage], exposure_normalize: bool = True) -> LinearImage:
    """Per-pixel, per-channel minimum over the images valid at that pixel.

    With ``exposure_normalize`` every image is first gain-matched so its
    valid-region median luminance equals the reference's (index 0).
    """
    if not images:
        raise ValueError("min_composite needs at least one image")
    ref = images[0]
    shape = ref.image.shape
    ref_median = _median_luminance(ref)
    out = np.full(shape, np.inf, dtype=np.float64)
    for i, m in enumerate(images):
        if m.image.shape != shape:
            raise ValueError("min_composite inputs must share one size")
        vals = m.image.data.astype(np.float64)
        if exposure_normalize and i > 0:
            med = _median_luminance(m)
            if med > 0 and ref_median > 0:
                vals = vals * (ref_median / med)
        out = np.where(m.valid[..., None], np.minimum(out, vals), out)
    if not np.all(np.isfinite(out)):
        raise ValueError("some pixels are valid in no image")
    return LinearImage(out.astype(np.float32))


def align_photo(photo: LinearImage, ref_feats: Sequence[Feature], params: AlignParams,
                rng: np.random.Generator) -> Homography:
    feats = detect_features(photo, params.max_features)
    pairs = match_features(feats, ref_feats, params.ratio)
    if len(pairs) < max(4, params.min_inliers):
        raise AlignmentError(f"only {len(pairs)} feature matches")
    src = np.array([feats[i].position for i, _ in pairs])
    dst = np.array([ref_feats[j].position for _, j in pairs])
    h, inliers = estimate_homography_ransac(src, dst, params.inlier_px, params.iters, rng)
    if len(inliers) < params.min_inliers:
        raise AlignmentError(f"only {len(inliers)} RANSAC inliers (need {params.min_inliers})")
    return h


def extract_guessed_diffuse(photos: Sequence[LinearImage], prealigned: bool = False,
                            params: AlignParams | None = None):
    """Align photos to the first one and min-composite them.

    Returns ``(guessed_diffuse, homographies)``; ``homographies[i]`` is None
    for a photo that failed alignment and was left out.
    """
    params = params or AlignParams()
    if not photos:
        raise ValueError("need at least one photo")
    ref = photos[0]
    size = (ref.width, ref.height)
    masked = [MaskedImage(ref, np.ones((ref.height, ref.width), dtype=bool))]
    homs: list[Homography | None] = [Homography.identity()]
    if prealigned:
        for p in photos[1:]:
            if (p.width, p.height) != size:
                raise ValueError("prealigned photos must share the reference size")
            masked.append(MaskedImage(p, np.ones((p.height, p.width), dtype=bool)))
            homs.append(Homography.identity())
    elif len(photos) > 1:
        ref_feats = detect_features(ref, params.max_features)
        if len(ref_feats) < max(4, params.min_inliers):
            raise AlignmentError(f"reference photo yields only {len(ref_feats)} features")
        for i, p in enumerate(photos[1:], start=1):
            rng = np.random.default_rng([params.seed, i])
            try:
                h = align_photo(p, ref_feats, params, rng)
            except AlignmentError as exc:
                log.warning("photo %d excluded from the composite: %s", i, exc)
                homs.append(None)
                continue
            masked.append(warp_to_reference(p, h, size))
            homs.append(h)
    return min_composite(masked, params.exposure_normalize), homs
