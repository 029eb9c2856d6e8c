import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svbrdfgan import brdf
from svbrdfgan.brdf import SvbrdfMaps, decode_maps, direction_field, render, render_gradients


def _cook_torrance_scalar(n, w, diffuse, specular, roughness, intensity=math.pi):
    """Textbook collocated Cook-Torrance for one pixel and one channel (l = v = h = w)."""
    c = sum(a * b for a, b in zip(n, w)) / math.sqrt(sum(a * a for a in n))
    if c <= 0:
        return 0.0
    alpha = roughness ** 2
    D = alpha ** 2 / (math.pi * (c * c * (alpha ** 2 - 1) + 1) ** 2)
    G1 = 2 * c / (c + math.sqrt(alpha ** 2 + (1 - alpha ** 2) * c * c))
    f = diffuse / math.pi + D * specular * G1 * G1 / (4 * c * c)
    return intensity * f * c


def _random_maps(r, h, w, rough_lo=0.05, tilt=0.6):
    n = np.concatenate([r.uniform(-tilt, tilt, (h, w, 2)), np.ones((h, w, 1))], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return SvbrdfMaps(n.astype(np.float32), r.random((h, w, 3)).astype(np.float32),
                      r.random((h, w, 1)).astype(np.float32),
                      r.uniform(rough_lo, 1.0, (h, w, 1)).astype(np.float32))


# -- direction field ---------------------------------------------------------------

def test_field_center_and_corner():
    f = direction_field(5, 5, 1.0)
    assert np.allclose(f.omega[2, 2], (0, 0, 1))
    want = np.array([0.5, 0.5, 1.0]) / np.linalg.norm([0.5, 0.5, 1.0])
    assert np.allclose(f.omega[0, 0], want)
    assert np.allclose(np.linalg.norm(f.omega, axis=-1), 1.0)


def test_field_distant():
    f = direction_field(7, 3, mode="distant")
    assert f.omega.shape == (3, 7, 3)
    assert np.all(f.omega == np.array([0.0, 0.0, 1.0]))


def test_field_crop_matches_full_frame():
    full = direction_field(16, 12, 0.8)
    part = direction_field(4, 5, 0.8, crop_origin=(6, 3), full_size=(16, 12))
    assert np.allclose(part.omega, full.omega[3:8, 6:10])


def test_field_center_offset_moves_the_camera():
    f = direction_field(9, 9, 1.0, center=(0.25, 0.0))
    # the pixel right under the shifted camera is at column 6 of 9 (x = 0.25)
    assert np.allclose(f.omega[4, 6], (0, 0, 1))


def test_field_bad_args():
    with pytest.raises(ValueError):
        direction_field(4, 4, mode="spot")
    with pytest.raises(ValueError):
        direction_field(4, 4, camera_height=0.0)


# -- render ------------------------------------------------------------------------

def test_white_lambertian_is_one():
    maps = SvbrdfMaps.constant(4, 6, diffuse=(1, 1, 1), specular=0.0)
    img = render(maps, direction_field(6, 4, mode="distant"))
    assert np.allclose(img.data, 1.0, atol=1e-6)


def test_black_material_is_black(rng):
    m = _random_maps(rng, 5, 5)
    black = SvbrdfMaps(m.normal, np.zeros_like(m.diffuse), np.zeros_like(m.specular), m.roughness)
    assert np.all(render(black, direction_field(5, 5)).data == 0)


def test_closed_form_pixel_value():
    maps = SvbrdfMaps.constant(2, 2, diffuse=(0.2, 0.2, 0.2), specular=0.5, roughness=0.3)
    img = render(maps, direction_field(2, 2, mode="distant"))
    expected = _cook_torrance_scalar((0, 0, 1), (0, 0, 1), 0.2, 0.5, 0.3)
    # frozen from the scalar oracle: 0.2 + 0.5 / (4 * 0.09**2)
    assert expected == pytest.approx(15.6320988, rel=1e-8)
    assert np.allclose(img.data, expected, rtol=1e-6)


def test_render_matches_scalar_oracle(rng):
    maps = _random_maps(rng, 6, 7, rough_lo=0.01, tilt=2.0)
    field = direction_field(7, 6, 0.7)
    img = render(maps, field).data
    for y in range(6):
        for x in range(7):
            for ch in range(3):
                want = _cook_torrance_scalar(maps.normal[y, x].astype(float), field.omega[y, x],
                                             float(maps.diffuse[y, x, ch]), float(maps.specular[y, x, 0]),
                                             float(maps.roughness[y, x, 0]))
                assert img[y, x, ch] == pytest.approx(want, rel=1e-5, abs=1e-7)


def test_back_facing_is_black():
    maps = SvbrdfMaps.constant(1, 1, diffuse=(1, 1, 1), specular=1.0, normal=(1.0, 0.0, 0.01))
    omega = np.array([[[-1.0, 0.0, 0.0]]])
    assert np.all(render(maps, brdf.DirectionField(omega)).data == 0)


def test_render_size_mismatch():
    with pytest.raises(ValueError):
        render(SvbrdfMaps.constant(4, 4), direction_field(5, 4))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 1.0), st.floats(0.1, 3.0))
def test_render_nonnegative_and_linear_in_intensity(d, s, r, inten):
    maps = SvbrdfMaps.constant(3, 3, diffuse=(d, d, d), specular=s, roughness=r)
    f = direction_field(3, 3, 0.5)
    a = render(maps, f, inten).data
    b = render(maps, f, 2 * inten).data
    assert np.all(a >= 0) and np.all(np.isfinite(a))
    assert np.allclose(b, 2 * a, rtol=1e-5, atol=1e-12)


# -- gradients -----------------------------------------------------------------------

def test_diffuse_gradient_is_linear_term(rng):
    maps = _random_maps(rng, 4, 4)
    field = direction_field(4, 4)
    up = rng.normal(size=(4, 4, 3))
    g = render_gradients(maps, field, 2.5, up)
    c = np.sum(maps.normal * field.omega, axis=-1, keepdims=True)
    assert np.allclose(g.diffuse, 2.5 * c / np.pi * up)


def test_zero_upstream_gives_zero_specular_gradient(rng):
    maps = _random_maps(rng, 4, 4)
    g = render_gradients(maps, direction_field(4, 4), np.pi, np.zeros((4, 4, 3)))
    assert np.all(g.specular == 0)


def _fd_check(r, pixels, eps=1e-4):
    """Analytic vs central differences; returns relative errors for every parameter of every pixel."""
    h, w = 1, pixels
    maps = _random_maps(r, h, w, rough_lo=0.05, tilt=0.8)
    omega = direction_field(w, h, 1.0, center=(0.0, 0.0)).omega
    # random unit directions with c >= 0.1
    om = np.concatenate([r.uniform(-0.8, 0.8, (h, w, 2)), np.ones((h, w, 1))], axis=-1)
    om /= np.linalg.norm(om, axis=-1, keepdims=True)
    n = maps.normal.astype(np.float64)
    keep = np.sum(n * om, axis=-1) >= 0.1
    omega = np.where(keep[..., None], om, n)
    up = r.normal(size=(h, w, 3))
    args = [n, maps.diffuse.astype(np.float64), maps.specular.astype(np.float64),
            maps.roughness.astype(np.float64)]
    analytic = brdf.shade_backward(*args, omega, np.pi, up)

    def per_pixel(a):
        return np.sum(up * brdf.shade(*a, omega, np.pi), axis=-1)

    errs = []
    for idx in range(4):
        for ch in range(args[idx].shape[-1]):
            plus = [a.copy() for a in args]
            minus = [a.copy() for a in args]
            plus[idx][..., ch] += eps
            minus[idx][..., ch] -= eps
            fd = (per_pixel(plus) - per_pixel(minus)) / (2 * eps)
            an = analytic[idx][..., ch]
            errs.append(np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6))
    return np.stack(errs, axis=-1).max(axis=-1).reshape(-1)


def test_render_gradients_match_finite_differences():
    errs = _fd_check(np.random.default_rng(5), 300)
    assert np.mean(errs < 1e-4) >= 0.99


def test_render_gradients_wrapper_matches_core(rng):
    maps = _random_maps(rng, 3, 3)
    f = direction_field(3, 3)
    up = rng.normal(size=(3, 3, 3))
    g = render_gradients(maps, f, np.pi, up)
    core = brdf.shade_backward(maps.normal.astype(np.float64), maps.diffuse.astype(np.float64),
                               maps.specular.astype(np.float64), maps.roughness.astype(np.float64),
                               f.omega, np.pi, up)
    for a, b in zip((g.normal, g.diffuse, g.specular, g.roughness), core):
        assert np.array_equal(a, b)


# -- decoding and storage -------------------------------------------------------------

def test_decode_zero_raw():
    m = decode_maps(np.zeros((2, 3, 8)))
    assert np.allclose(m.diffuse, 0.5) and np.allclose(m.specular, 0.5) and np.allclose(m.roughness, 0.5)
    assert np.allclose(m.normal, (0, 0, 1))


def test_decode_examples():
    raw = np.zeros((1, 1, 8))
    raw[..., 2] = 1.0
    raw[..., 3] = -1.0
    m = decode_maps(raw)
    assert np.allclose(m.normal, (0, 0, 1))
    assert m.roughness[0, 0, 0] == pytest.approx(0.01)
    with pytest.raises(ValueError):
        decode_maps(np.zeros((2, 2, 7)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_decode_always_valid(seed):
    raw = np.random.default_rng(seed).uniform(-1, 1, (4, 4, 8))
    decode_maps(raw).validate()


def test_decode_backward_matches_fd(rng):
    raw = rng.uniform(-0.9, 0.9, (2, 3, 8))
    gs = [rng.normal(size=s) for s in ((2, 3, 3), (2, 3, 3), (2, 3, 1), (2, 3, 1))]

    def f(t):
        outs = brdf.decode_raw(t)
        return sum(np.sum(g * o) for g, o in zip(gs, outs))

    from conftest import central_diff
    fd = central_diff(f, raw)
    an = brdf.decode_raw_backward(raw, *gs)
    assert np.allclose(an, fd, atol=1e-7)


def test_validate_rejects_bad_maps():
    m = SvbrdfMaps.constant(2, 2)
    with pytest.raises(ValueError):
        SvbrdfMaps(m.normal * 2, m.diffuse, m.specular, m.roughness).validate()
    with pytest.raises(ValueError):
        SvbrdfMaps(m.normal, m.diffuse + 1, m.specular, m.roughness).validate()
    with pytest.raises(ValueError):
        SvbrdfMaps(m.normal, m.diffuse, m.specular, m.roughness * 0).validate()
    with pytest.raises(ValueError):
        SvbrdfMaps(m.normal, m.diffuse[:1], m.specular, m.roughness).validate()


def test_save_load_maps_round_trip(tmp_path, rng):
    m = _random_maps(rng, 8, 8)
    paths = brdf.save_maps(m, tmp_path / "mat")
    assert sorted(p.name for p in paths.values()) == [
        "mat_diffuse.png", "mat_normal.png", "mat_roughness.png", "mat_specular.png"]
    back = brdf.load_maps(tmp_path / "mat")
    back.validate()
    assert np.abs(back.specular - m.specular).max() <= 0.5 / 255 + 1e-6
    assert np.abs(back.roughness - m.roughness).max() <= 0.5 / 255 + 1e-6
    assert np.abs(back.normal - m.normal).max() < 0.02
    assert np.abs(back.diffuse - m.diffuse).max() < 0.01
