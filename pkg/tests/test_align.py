import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from svbrdfgan import align, bench
from svbrdfgan.align import (AlignmentError, AlignParams, Feature, Homography, MaskedImage, detect_features,
                             estimate_homography_ransac, extract_guessed_diffuse, match_features, min_composite,
                             symmetric_error, warp_to_reference)
from svbrdfgan.imaging import LinearImage

H_TRUE = np.array([[1.02, 0.03, 4.0], [-0.02, 0.98, -3.0], [2e-4, -1e-4, 1.0]])


def _canvas(size=200, seed=0):
    """Random axis-aligned rectangles: plenty of Harris corners, lightly blurred."""
    r = np.random.default_rng(seed)
    img = np.full((size, size), 0.3)
    for _ in range(90):
        x0, y0 = r.integers(0, size - 8, 2)
        w, h = r.integers(6, 30, 2)
        img[y0:y0 + h, x0:x0 + w] = r.uniform(0.05, 0.95)
    return ndimage.gaussian_filter(img, 0.8)


def _view(canvas, hom, size=128, offset=36, gain=1.0):
    """Photo whose pixel p shows reference pixel hom(p); the reference frame sits at ``offset`` in the canvas."""
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    ref = align._project(hom, np.stack([xs, ys], axis=-1))
    vals = ndimage.map_coordinates(canvas, [ref[..., 1] + offset, ref[..., 0] + offset], order=3, mode="nearest")
    return LinearImage(np.repeat(np.clip(vals * gain, 0, None)[..., None], 3, axis=2))


def _corner_error(h_est, h_true, size=128):
    corners = np.array([[0, 0], [size - 1, 0], [0, size - 1], [size - 1, size - 1]], dtype=float)
    return np.abs(align._project(h_est, corners) - align._project(h_true, corners)).max()


# -- homography type --------------------------------------------------------------------

def test_homography_normalizes_and_inverts(tmp_path):
    h = Homography(H_TRUE * 3.0)
    assert h.h[2, 2] == 1.0
    prod = h.inverse().h @ h.h
    assert np.allclose(prod / prod[2, 2], np.eye(3), atol=1e-12)
    h.save(tmp_path / "h.txt")
    assert np.array_equal(Homography.load(tmp_path / "h.txt").h, h.h)
    with pytest.raises(AlignmentError):
        Homography(np.zeros((3, 3)))


def test_translation_homography():
    assert np.allclose(Homography.translation(7, -3).apply(np.array([[1.0, 2.0]])), [[8.0, -1.0]])


# -- features ------------------------------------------------------------------------------

def test_flat_image_has_no_features():
    assert len(detect_features(LinearImage(np.full((64, 64, 3), 0.4)))) <= 2


def test_copy_gives_identical_detections():
    img = LinearImage(np.repeat(_canvas(96)[..., None], 3, axis=2))
    a = detect_features(img)
    b = detect_features(LinearImage(img.data.copy()))
    assert [f.position for f in a] == [f.position for f in b]
    assert all(abs(np.linalg.norm(f.descriptor) - 1) < 1e-6 for f in a)


def test_checkerboard_corners():
    sq = 12
    ys, xs = np.mgrid[0:96, 0:96]
    board = (((xs // sq) + (ys // sq)) % 2).astype(float) * 0.8 + 0.1
    feats = detect_features(LinearImage(np.repeat(board[..., None], 3, axis=2)))
    assert len(feats) >= 20
    # interior corners sit between pixels k*sq - 1 and k*sq, i.e. at k*sq - 0.5
    for f in feats:
        for v in f.position:
            k = round((v + 0.5) / sq)
            assert abs(v - (k * sq - 0.5)) <= 1.0


def _feats(desc):
    return [Feature(float(i), 0.0, d / np.linalg.norm(d)) for i, d in enumerate(desc)]


def test_match_identical_lists(rng):
    f = _feats(rng.normal(size=(30, 64)))
    assert match_features(f, f, 0.8) == [(i, i) for i in range(30)]


def test_match_random_descriptors_rejected_at_0_7(rng):
    a = _feats(rng.normal(size=(40, 64)))
    b = _feats(rng.normal(size=(40, 64)))
    # brute-force oracle: best/second-best distance ratio over all pairs
    da = np.array([f.descriptor for f in a])
    db = np.array([f.descriptor for f in b])
    dist = np.linalg.norm(da[:, None] - db[None], axis=-1)
    srt = np.sort(dist, axis=1)
    assert np.all(srt[:, 0] >= 0.7 * srt[:, 1])
    assert match_features(a, b, 0.7) == []


def test_match_duplicate_descriptor_rejected(rng):
    d = rng.normal(size=(5, 64))
    a = _feats(d)
    b = _feats(np.concatenate([d, d[2:3]]))
    pairs = match_features(a, b, 0.8)
    assert all(i != 2 for i, _ in pairs)
    assert len(pairs) == 4


# -- RANSAC ---------------------------------------------------------------------------------

def test_ransac_identity(rng):
    pts = rng.uniform(0, 100, (10, 2))
    h, inl = estimate_homography_ransac(pts, pts.copy(), 1.0, 200, rng)
    assert np.allclose(h.h, np.eye(3), atol=1e-6)
    assert len(inl) == 10


def test_ransac_translation(rng):
    pts = rng.uniform(0, 100, (12, 2))
    h, _ = estimate_homography_ransac(pts, pts + [7, -3], 1.0, 200, rng)
    assert np.allclose(h.h, [[1, 0, 7], [0, 1, -3], [0, 0, 1]], atol=1e-6)


def test_ransac_with_outliers(rng):
    src = rng.uniform(0, 127, (100, 2))
    dst = align._project(H_TRUE, src) + rng.normal(0, 0.3, (100, 2))
    bad = rng.choice(100, 30, replace=False)
    dst[bad] = rng.uniform(0, 127, (30, 2))
    h, inl = estimate_homography_ransac(src, dst, 2.0, 2000, np.random.default_rng(0))
    assert _corner_error(h.h, H_TRUE) < 0.5
    assert len(set(inl) & set(bad)) <= 2


def test_ransac_too_few_points(rng):
    with pytest.raises(AlignmentError):
        estimate_homography_ransac(np.zeros((3, 2)), np.zeros((3, 2)), 1.0, 10, rng)


def test_symmetric_error_is_max_of_directions():
    src = np.array([[10.0, 20.0]])
    dst = align._project(H_TRUE, src) + [[1.0, 0.0]]
    e = symmetric_error(H_TRUE, src, dst)
    fwd = np.linalg.norm(align._project(H_TRUE, src) - dst)
    bwd = np.linalg.norm(align._project(np.linalg.inv(H_TRUE), dst) - src)
    assert e[0] == pytest.approx(max(fwd, bwd))


# -- warping --------------------------------------------------------------------------------------

def test_warp_identity(rng):
    img = LinearImage(rng.random((20, 30, 3)))
    m = warp_to_reference(img, Homography.identity())
    assert m.valid.all()
    assert np.allclose(m.image.data, img.data, atol=1e-6)


def test_warp_translation_band(rng):
    img = LinearImage(rng.random((20, 30, 3)))
    m = warp_to_reference(img, Homography.translation(10, 0))
    assert not m.valid[:, :10].any() and m.valid[:, 10:].all()
    assert np.allclose(m.image.data[:, 10:], img.data[:, :20], atol=1e-6)
    assert np.all(m.image.data[:, :10] == 0)


def smooth_texture(size=128, sigma=5.0, seed=0):
    """Band-limited random texture stretched to [0, 1]."""
    f = ndimage.gaussian_filter(np.random.default_rng(seed).random((size, size, 3)), (sigma, sigma, 0))
    return LinearImage((f - f.min()) / (f.max() - f.min()))


def round_trip_error(img, h_fwd, h_back):
    once = warp_to_reference(img, h_fwd)
    back = warp_to_reference(once.image, h_back)
    mask_back = warp_to_reference(LinearImage(once.valid.astype(np.float32)), h_back).image.data[..., 0]
    both = back.valid & (mask_back > 0.999)
    return float(np.abs(back.image.data - img.data)[both].max()), float(both.mean())


def test_warp_round_trip():
    h = Homography(H_TRUE)
    err, frac = round_trip_error(smooth_texture(), h, h.inverse())
    assert frac > 0.5
    assert err < 2 / 255
    # the check has teeth: a half-pixel slip in the inverse is caught
    slipped = Homography(Homography.translation(0.5, 0).h @ h.inverse().h)
    assert round_trip_error(smooth_texture(), h, slipped)[0] > 2 / 255


# -- compositing ---------------------------------------------------------------------------------------

def _full(img):
    return MaskedImage(img, np.ones(img.data.shape[:2], dtype=bool))


def test_composite_single_and_constant():
    a = LinearImage(np.random.default_rng(0).random((8, 8, 3)))
    assert min_composite([_full(a)]) == a
    lo = LinearImage(np.full((4, 4, 3), 0.3))
    hi = LinearImage(np.full((4, 4, 3), 0.5))
    assert np.allclose(min_composite([_full(hi), _full(lo)], exposure_normalize=False).data, 0.3)


def test_composite_skips_invalid_pixels():
    a = LinearImage(np.full((2, 2, 3), 0.5))
    b = LinearImage(np.zeros((2, 2, 3)))
    valid = np.array([[True, False], [False, False]])
    out = min_composite([_full(a), MaskedImage(b, valid)], exposure_normalize=False)
    assert out.data[0, 0, 0] == 0 and out.data[1, 1, 0] == 0.5


def test_composite_exposure_normalization():
    a = LinearImage(np.random.default_rng(1).uniform(0.1, 0.5, (6, 6, 3)))
    b = LinearImage(a.data * 2.0)
    assert np.allclose(min_composite([_full(a), _full(b)]).data, a.data, rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31), st.booleans())
def test_composite_never_exceeds_the_reference(k, seed, norm):
    r = np.random.default_rng(seed)
    imgs = [_full(LinearImage(r.random((5, 5, 3)))) for _ in range(k)]
    out = min_composite(imgs, exposure_normalize=norm).data
    assert np.all(out <= imgs[0].image.data + 1e-7)
    if not norm:
        assert np.allclose(out, np.min([m.image.data for m in imgs], axis=0))


def test_composite_beats_every_single_view():
    gt = bench.glossy_fixture(64, seed=2)
    views = bench.synth_views(gt, 9, bench.grid_offsets(9, 0.3))
    ref = bench.diffuse_only_render(gt)
    comp = min_composite([_full(v) for v in views], exposure_normalize=False)
    assert all(np.all(comp.data <= v.data) for v in views)
    assert bench.rmse(comp.data, ref.data) < min(bench.rmse(v.data, ref.data) for v in views)


# -- end to end -------------------------------------------------------------------------------------------

def test_prealigned_single_and_brute_force_min(rng):
    one = LinearImage(rng.random((16, 16, 3)))
    out, homs = extract_guessed_diffuse([one], prealigned=True)
    assert out == one and len(homs) == 1
    views = [LinearImage(rng.random((16, 16, 3))) for _ in range(9)]
    out, _ = extract_guessed_diffuse(views, True, AlignParams(exposure_normalize=False))
    assert np.array_equal(out.data, np.min([v.data for v in views], axis=0))


def test_extract_with_real_alignment_and_noise_exclusion():
    canvas = _canvas()
    shifts = [np.eye(3), H_TRUE, np.array([[0.99, -0.02, -5.0], [0.01, 1.01, 6.0], [-1e-4, 1e-4, 1.0]])]
    photos = [_view(canvas, s) for s in shifts]
    noise = LinearImage(np.random.default_rng(9).random((128, 128, 3)))
    params = AlignParams(exposure_normalize=False)
    clean, homs = extract_guessed_diffuse(photos, False, params)
    for est, true in zip(homs, shifts):
        assert _corner_error(est.h, true) < 0.5
    with_noise, homs2 = extract_guessed_diffuse(photos[:2] + [noise] + photos[2:], False, params)
    assert homs2[2] is None
    assert with_noise == clean


def test_unalignable_reference():
    flat = LinearImage(np.full((64, 64, 3), 0.5))
    with pytest.raises(AlignmentError):
        extract_guessed_diffuse([flat, flat], prealigned=False)
