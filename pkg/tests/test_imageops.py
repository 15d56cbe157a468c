import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from imitreg import imageops as io
from imitreg.errors import DimensionMismatch, ImageTooSmall
from imitreg.imageops import Branch, FrangiConfig, GuidedFilterConfig


def interior(a, m):
    return a[m:-m, m:-m]


# -- to_gray / standardize / hist_equalize ---------------------------------

def test_to_gray_examples():
    assert np.all(io.to_gray(np.zeros((3, 4, 3))) == 0)
    px = np.array([[[0.2, 0.8, 0.4]]])
    assert io.to_gray(px, "green")[0, 0] == 0.8
    assert io.to_gray(np.ones((2, 2, 3)), "luma") == pytest.approx(1.0)


def test_to_gray_rejects_bad_shape():
    with pytest.raises(DimensionMismatch):
        io.to_gray(np.zeros((3, 3, 2)))


def test_standardize_examples():
    assert np.all(io.standardize(np.full((3, 3), 0.37)) == 0)
    assert np.allclose(io.standardize(np.array([[2.0, 6.0]])), [[-1, 1]])
    assert np.allclose(io.standardize(np.array([[0.0, 5.0, 10.0]])), [[-1, 0, 1]])


@settings(max_examples=100)
@given(arrays(np.float64, (6, 7), elements=st.floats(-1e3, 1e3)))
def test_standardize_range_and_idempotent(a):
    s = io.standardize(a)
    assert s.min() >= -1 and s.max() <= 1
    assert np.allclose(io.standardize(s), s, rtol=0, atol=1e-12)


def test_subnormal_range_stays_finite():
    a = np.array([[0.0, 5e-324], [1e-323, 0.0]])
    assert np.array_equal(io.standardize(a), [[-1.0, 0.0], [1.0, -1.0]])
    h = io.hist_equalize(a)
    assert np.all(np.isfinite(h)) and h[1, 0] == 1.0


def test_hist_equalize_constant():
    out = io.hist_equalize(np.full((5, 5), 0.3))
    assert np.ptp(out) == 0


def test_hist_equalize_two_levels():
    a = np.array([[0.1, 0.1, 0.9, 0.9]])
    out = io.hist_equalize(a)
    # CDF values 0.5 and 1.0 rescaled to [-1, 1]
    assert np.allclose(out, [[0.0, 0.0, 1.0, 1.0]])


def test_hist_equalize_uniform_is_near_identity():
    bins = 256
    vals = -1 + 2 * (np.arange(bins) + 0.5) / bins
    a = np.repeat(vals, 4).reshape(32, 32)
    out = io.hist_equalize(a, bins)
    assert np.max(np.abs(out - a)) <= 2.0 / bins


@settings(max_examples=100)
@given(arrays(np.float64, (8, 8), elements=st.floats(-5, 5)))
def test_hist_equalize_monotone(a):
    out = io.hist_equalize(a).ravel()
    order = np.argsort(a.ravel(), kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


# -- gaussian / LoG / hessian ----------------------------------------------

def test_blur_constant():
    assert np.allclose(io.gaussian_blur(np.full((20, 30), 2.5), 1.7), 2.5, atol=1e-12)


def test_blur_impulse_center_matches_2d_kernel():
    a = np.zeros((21, 21))
    a[10, 10] = 1.0
    out = io.gaussian_blur(a, 1.0)
    # independent oracle: directly evaluated, normalized 2D kernel on the same support
    r = np.arange(-3, 4)
    g2 = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / 2.0)
    g2 /= g2.sum()
    assert out[10, 10] == pytest.approx(g2[3, 3], rel=1e-12)
    assert np.allclose(out[7:14, 7:14], g2, atol=1e-15)
    assert out.sum() == pytest.approx(1.0, rel=1e-9)


def test_log_constant_and_ramp():
    assert np.allclose(io.log_filter(np.full((20, 20), 3.0), 2.0), 0, atol=1e-9)
    x = np.arange(40, dtype=float)
    ramp = np.tile(0.3 * x, (30, 1)) + 0.1 * np.arange(30)[:, None]
    out = io.log_filter(ramp, 2.0)
    assert np.allclose(interior(out, 8), 0, atol=1e-6)


def test_log_gaussian_blob():
    yy, xx = np.mgrid[0:41, 0:41]
    blob = np.exp(-((xx - 20) ** 2 + (yy - 20) ** 2) / (2 * 2.0 ** 2))
    out = io.log_filter(blob, 2.0)
    assert out[20, 20] < 0
    assert abs(out[20, 20]) > 5 * np.median(np.abs(out))


def test_hessian_constant():
    for m in io.hessian_2d(np.full((16, 16), -0.4), 1.5):
        assert np.allclose(m, 0, atol=1e-12)


def test_hessian_quadratics():
    sigma = 1.0
    yy, xx = np.mgrid[0:40, 0:40].astype(float)
    ixx, ixy, iyy = io.hessian_2d(xx ** 2, sigma)
    m = 6
    assert np.allclose(interior(ixx, m), 2 * sigma ** 2, rtol=0.02)
    assert np.allclose(interior(ixy, m), 0, atol=1e-6)
    assert np.allclose(interior(iyy, m), 0, atol=1e-6)
    _, ixy, _ = io.hessian_2d(xx * yy, sigma)
    assert np.allclose(interior(ixy, m), sigma ** 2, rtol=0.02)


# -- guided filter ----------------------------------------------------------

def test_guided_constant():
    out = io.guided_filter(np.full((12, 12), 0.2), np.full((12, 12), 0.7), GuidedFilterConfig(2, 1e-3))
    assert np.allclose(out, 0.7)


def _window_mean(a, r):
    # oracle: explicit loop over boundary-truncated windows
    out = np.empty_like(a)
    h, w = a.shape
    for y in range(h):
        for x in range(w):
            out[y, x] = a[max(y - r, 0):y + r + 1, max(x - r, 0):x + r + 1].mean()
    return out


def test_guided_large_eps_is_box_mean():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (30, 30))
    out = io.guided_filter(a, a, GuidedFilterConfig(3, 1e6 * a.var()))
    # the slope a -> 0, so the output is the window mean of b = window mean of the input
    ref = _window_mean(_window_mean(a, 3), 3)
    assert np.max(np.abs(out - ref)) < 1e-3


def test_guided_large_eps_smooth_input_near_single_box_mean():
    yy, xx = np.mgrid[0:40, 0:40].astype(float)
    a = 0.5 * np.sin(xx / 9.0) + 0.3 * np.cos(yy / 11.0)
    out = io.guided_filter(a, a, GuidedFilterConfig(2, 1e6 * a.var()))
    assert np.max(np.abs(interior(out - _window_mean(a, 2), 4))) < 1e-2


def test_guided_small_eps_preserves_edge():
    a = np.zeros((20, 20))
    a[:, 10:] = 1.0
    out = io.guided_filter(a, a, GuidedFilterConfig(2, 1e-6 * a.var()))
    assert np.max(np.abs(out - a)) < 0.01


def test_guided_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        io.guided_filter(np.zeros((4, 4)), np.zeros((4, 5)))


# -- Frangi -----------------------------------------------------------------

def _line_and_blob(n=96):
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    line = np.exp(-((yy - 30) ** 2) / (2 * 1.0 ** 2))
    blob = np.exp(-((xx - 48) ** 2 + (yy - 72) ** 2) / (2 * 2.0 ** 2))
    return 1.0 - 0.5 * np.maximum(line, blob)


def test_frangi_constant_zero():
    assert np.all(io.frangi_vesselness(np.full((40, 40), 0.5)) == 0)


def test_frangi_dark_line_vs_background():
    yy = np.mgrid[0:80, 0:80][0].astype(float)
    img = 1.0 - 0.5 * np.exp(-((yy - 40) ** 2) / (2 * 1.0 ** 2))
    v = io.frangi_vesselness(img, FrangiConfig(scales=(1, 1.5, 2, 3, 4)))
    on = v[40, 10:70].mean()
    off = v[np.abs(np.arange(80) - 40) > 10][:, 10:70].mean()
    assert on >= 10 * off
    assert v.min() >= 0 and v.max() <= 1


def test_frangi_suppresses_blobs():
    img = _line_and_blob()
    v = io.frangi_vesselness(img, FrangiConfig(scales=(1, 1.5, 2, 3, 4)))
    line = v[30, 10:86].mean()
    assert v[72, 48] < 0.5 * line


def test_frangi_polarity():
    img = _line_and_blob()
    bright = io.frangi_vesselness(img, FrangiConfig(polarity="bright"))
    assert bright[30, 10:86].mean() < 0.05


# -- resample ---------------------------------------------------------------

def test_resample_shapes_and_constant():
    a = np.full((64, 64), 0.3)
    d = io.resample(a, "down4")
    assert d.shape == (16, 16) and np.allclose(d, 0.3)
    u = io.resample(d, "up4")
    assert u.shape == (64, 64) and np.allclose(u, 0.3)
    assert io.resample(np.zeros((65, 70)), "down4").shape == (17, 18)


def test_resample_round_trip_low_frequency():
    x = np.arange(64, dtype=float)
    f = np.tile(np.sin(2 * np.pi * x / 64), (64, 1))
    back = io.resample(io.resample(f, "down4"), "up4")
    assert np.sqrt(np.mean((back - f) ** 2)) < 0.05


def test_resample_too_small():
    with pytest.raises(ImageTooSmall):
        io.resample(np.zeros((3, 10)), "down4")


# -- preprocess ---------------------------------------------------------------

def test_preprocess_none_constant_rgb():
    assert np.all(io.preprocess(np.full((16, 16, 3), 0.4), Branch.NONE) == 0)


def test_preprocess_guided_frangi_constant():
    out = io.preprocess(np.full((32, 32), 0.4), Branch.GUIDED_FRANGI)
    assert out.shape == (32, 32) and np.all(out == 0)


@pytest.mark.parametrize("branch", list(Branch))
def test_preprocess_shape_and_range(branch):
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, (50, 61, 3))
    out = io.preprocess(img, branch)
    assert out.shape == (50, 61)
    assert np.all(np.isfinite(out)) and out.min() >= -1 and out.max() <= 1


# -- global properties --------------------------------------------------------

@pytest.mark.parametrize("op", [
    lambda a: io.gaussian_blur(a, 1.3),
    lambda a: io.log_filter(a, 1.5),
    lambda a: io.guided_filter(a, a, GuidedFilterConfig(2, 0.01)),
    lambda a: io.frangi_vesselness(a, FrangiConfig(scales=(1, 2), c=0.3)),
    lambda a: io.hist_equalize(a),
    lambda a: io.resample(a, "up4"),
])
def test_finite_on_random_inputs(op):
    rng = np.random.default_rng(4)
    for _ in range(5):
        a = rng.normal(0, rng.uniform(0.01, 100), (24, 20))
        assert np.all(np.isfinite(op(a)))


def _shifted_scene(dx, dy, n=80):
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    x0, y0 = 35 + dx, 38 + dy
    vessel = np.exp(-((xx - x0) * 0.8 + (yy - y0) * 0.6) ** 2 / 4.0) * \
        np.exp(-((xx - x0) ** 2 + (yy - y0) ** 2) / 300.0)
    return 0.8 - 0.5 * vessel


@pytest.mark.parametrize("op,support", [
    (lambda a: io.gaussian_blur(a, 1.5), 6),
    (lambda a: io.log_filter(a, 1.5), 7),
    (lambda a: io.guided_filter(a, a, GuidedFilterConfig(2, 0.01)), 5),
    (lambda a: io.frangi_vesselness(a, FrangiConfig(scales=(1, 1.5, 2))), 8),
])
def test_translation_equivariance(op, support):
    dx, dy = 3, -2
    a = op(_shifted_scene(0, 0))
    b = op(_shifted_scene(dx, dy))
    m = support + 4
    n = a.shape[0]
    ya = slice(m, n - m)
    xa = slice(m, n - m)
    yb = slice(m + dy, n - m + dy)
    xb = slice(m + dx, n - m + dx)
    assert np.max(np.abs(a[ya, xa] - b[yb, xb])) < 1e-9


# -- vesselness on a rendered vessel tree ---------------------------------------

def _centerline_hits(v, tree, size, step=2.0, window=6.0, border=20):
    """For each centerline sample, is the vesselness peak across the vessel within 2 px?"""
    from imitreg.kernels import bilinear_sample
    off = np.arange(-window, window + 0.01, 0.5)
    hits = []
    for (x0, y0, x1, y1) in tree.segments:
        length = np.hypot(x1 - x0, y1 - y0)
        if length < 1e-9:
            continue
        ux, uy = (x1 - x0) / length, (y1 - y0) / length
        for s in np.arange(0.0, length, step):
            px, py = x0 + s * ux, y0 + s * uy
            if not (border <= px <= size - 1 - border and border <= py <= size - 1 - border):
                continue
            prof = bilinear_sample(v, px - off * uy, py + off * ux, -1.0)
            hits.append(abs(off[np.argmax(prof)]) <= 2.0)
    return np.array(hits)


def test_guided_frangi_peaks_on_centerlines():
    from imitreg.augment import SynthConfig, grow_tree, render_fundus
    # vessel calibres of FIRE after factor-4 downsampling, the scale this branch targets
    cfg = SynthConfig(size=512, vessel_width_range=(5.0, 12.0))
    hits = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        tree = grow_tree(rng, cfg)
        img = render_fundus(tree, cfg.size, rng, cfg.noise)
        hits.append(_centerline_hits(io.preprocess(img, Branch.GUIDED_FRANGI), tree, cfg.size))
    hits = np.concatenate(hits)
    assert len(hits) > 500
    assert hits.mean() >= 0.9
