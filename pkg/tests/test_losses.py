import numpy as np
import pytest
from conftest import random_billboards, random_camera
from hypothesis import given
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from billboard_splatting.losses import (
    LossReport,
    billboard_impact,
    image_loss,
    l1_loss,
    psnr,
    ssim,
    texture_reg_loss,
    visibility_weight,
)
from billboard_splatting.rasterizer import render
from billboard_splatting.scene import gaussian_pattern_texture, logit

C1, C2 = 0.01 ** 2, 0.03 ** 2


def test_l1_examples(rng):
    a = rng.uniform(size=(6, 5, 3))
    assert l1_loss(a, a)[0] == 0
    assert l1_loss(a + 0.1, a)[0] == pytest.approx(0.1)
    b = rng.uniform(size=a.shape)
    total = 0.0
    for i in np.ndindex(a.shape):
        total += abs(a[i] - b[i])
    assert l1_loss(a, b)[0] == pytest.approx(total / a.size)
    with pytest.raises(ValueError):
        l1_loss(a, a[:2])


def test_ssim_identical_and_constant():
    a = np.random.default_rng(0).uniform(size=(20, 20, 3))
    assert ssim(a, a)[0] == pytest.approx(1.0)
    value, _ = ssim(np.zeros((16, 16, 3)), np.ones((16, 16, 3)))
    assert value == pytest.approx(C1 / (1 + C1), rel=1e-9)
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 30, 3)), np.zeros((10, 30, 3)))


def test_ssim_matches_skimage(rng):
    for _ in range(5):
        a = rng.uniform(size=(24, 31, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                    data_range=1.0, channel_axis=-1)
        assert ssim(a, b)[0] == pytest.approx(ref, abs=1e-9)


def test_ssim_gradient_finite_difference(rng):
    a = rng.uniform(size=(16, 16, 3))
    b = rng.uniform(size=(16, 16, 3))
    _, g = ssim(a, b)
    h = 1e-6
    idx = [tuple(rng.integers(0, 16, 2)) + (int(rng.integers(0, 3)),) for _ in range(40)]
    for i in idx:
        ap, am = a.copy(), a.copy()
        ap[i] += h
        am[i] -= h
        fd = (ssim(ap, b)[0] - ssim(am, b)[0]) / (2 * h)
        assert abs(fd - g[i]) <= 1e-3 * max(abs(fd), 1e-6) + 1e-9


def test_image_loss_combination(rng):
    a = rng.uniform(size=(16, 16, 3))
    b = rng.uniform(size=(16, 16, 3))
    loss, grad, l1, s = image_loss(a, b)
    assert loss == pytest.approx(0.8 * l1_loss(a, b)[0] + 0.2 * (1 - ssim(a, b)[0]))
    assert image_loss(a, a)[0] == pytest.approx(0.0, abs=1e-12)
    assert LossReport(l1=0.5, ssim=0.0, image_loss=0.8 * 0.5 + 0.2 * 1.0).image_loss == pytest.approx(0.6)
    h = 1e-6
    i = (3, 7, 1)
    ap, am = a.copy(), a.copy()
    ap[i] += h
    am[i] -= h
    fd = (image_loss(ap, b)[0] - image_loss(am, b)[0]) / (2 * h)
    assert grad[i] == pytest.approx(fd, rel=1e-4)


def test_loss_report_total():
    r = LossReport(l1=0.1, ssim=0.9, image_loss=0.1, l_rgb=2.0, l_alpha=3.0, texture_loss=0.5)
    assert r.total == pytest.approx(0.6)


def test_impact_sums_blend_weights(rng):
    b = random_billboards(rng, 30)
    cam = random_camera(rng, 24, 24)
    fb = render(b, cam, training=True)
    imp = billboard_impact(fb)
    assert imp.shape == (30,) and np.all(imp >= 0)
    # total impact is the accumulated opacity over the image
    assert imp.sum() == pytest.approx((1 - fb.transmittance).sum(), rel=1e-9)
    with pytest.raises(ValueError):
        billboard_impact(render(b, cam))


def test_visibility_weight_rule():
    w = visibility_weight(np.array([0.0, 10.0, 500.0, 900.0]), 500.0)
    np.testing.assert_allclose(w, [0.0, 490.0, 0.0, 0.0])


def test_texture_regularizer_zero_at_pattern_and_gradients(rng):
    b = random_billboards(rng, 4, tex_size=6)
    pattern = gaussian_pattern_texture(6)
    b.color_texture[:] = 0
    b.opacity_logits[:] = logit(pattern)
    l_rgb, l_alpha, total, _ = texture_reg_loss(b, np.ones(4), pattern)
    assert l_rgb == 0 and l_alpha == pytest.approx(0, abs=1e-12) and total == pytest.approx(0, abs=1e-16)

    b = random_billboards(rng, 4, tex_size=6)
    w = np.array([1.0, 0.0, 250.0, 3.0])
    _, _, _, grads = texture_reg_loss(b, w, pattern, 0.3, 0.7)
    h = 1e-7
    for name in ("color_texture", "opacity_logits"):
        arr = getattr(b, name)
        for _ in range(10):
            i = tuple(rng.integers(0, s) for s in arr.shape)
            old = arr[i]
            arr[i] = old + h
            fp = texture_reg_loss(b, w, pattern, 0.3, 0.7)[2]
            arr[i] = old - h
            fm = texture_reg_loss(b, w, pattern, 0.3, 0.7)[2]
            arr[i] = old
            assert grads[name][i] == pytest.approx((fp - fm) / (2 * h), rel=1e-4, abs=1e-12)


def test_psnr_values(rng):
    a = rng.uniform(size=(8, 8, 3))
    assert psnr(a, a) == float("inf")
    b = np.zeros((10, 10))
    assert psnr(b + 0.1, b) == pytest.approx(20.0)
    c = rng.uniform(size=(8, 8, 3))
    mse = sum((a[i] - c[i]) ** 2 for i in np.ndindex(a.shape)) / a.size
    assert psnr(a, c) == pytest.approx(10 * np.log10(1 / mse))
    with pytest.raises(ValueError):
        psnr(a, c[:4])


@given(st.floats(0, 1), st.floats(0, 1))
def test_l1_gradient_sign(x, y):
    _, g = l1_loss(np.full((2, 2), x), np.full((2, 2), y))
    assert np.all(np.sign(g) == np.sign(x - y))
