"""Photometric losses and the visibility-weighted texture regularizer.

Every loss returns ``(value, gradient)`` where the gradient is taken with
respect to the first argument (or the texture parameters for the regularizer).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .rasterizer import FrameBuffer
from .scene import BillboardSet, sigmoid

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WEIGHT = 0.2
COLOR_REG_WEIGHT = 1e-4
OPACITY_REG_WEIGHT = 1e-4
IMPACT_CAP = 500.0


@dataclass
class LossReport:
    l1: float = 0.0
    ssim: float = 1.0
    image_loss: float = 0.0
    l_rgb: float = 0.0
    l_alpha: float = 0.0
    texture_loss: float = 0.0

    @property
    def total(self) -> float:
        return self.image_loss + self.texture_loss


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def l1_loss(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    diff = a - b
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def _gauss_1d(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - size // 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _blur(img, g):
    # zero-padded "same" filtering; cropping afterwards yields the valid windows
    out = correlate1d(img, g, axis=0, mode="constant")
    return correlate1d(out, g, axis=1, mode="constant")


def ssim(a, b):
    """Mean SSIM over all full 11x11 windows and channels, and dSSIM/da."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    if a.ndim == 2:
        val, grad = ssim(a[..., None], b[..., None])
        return val, grad[..., 0]
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = _gauss_1d()
    r = SSIM_WINDOW // 2
    crop = (slice(r, h - r), slice(r, w - r))

    def blur(x):
        return _blur(x, g)[crop]

    mean_a, mean_b = blur(a), blur(b)
    s_aa = blur(a * a) - mean_a ** 2
    s_bb = blur(b * b) - mean_b ** 2
    s_ab = blur(a * b) - mean_a * mean_b
    num1 = 2 * mean_a * mean_b + SSIM_C1
    num2 = 2 * s_ab + SSIM_C2
    den1 = mean_a ** 2 + mean_b ** 2 + SSIM_C1
    den2 = s_aa + s_bb + SSIM_C2
    smap = num1 * num2 / (den1 * den2)
    value = float(smap.mean())

    k = 1.0 / smap.size
    d_mean_a = k * (2 * mean_b * num2 / (den1 * den2) - smap * 2 * mean_a / den1)
    d_s_aa = k * (-smap / den2)
    d_s_ab = k * (2 * num1 / (den1 * den2))
    # the variance terms depend on mean_a too
    d_mean_a_total = d_mean_a - 2 * mean_a * d_s_aa - mean_b * d_s_ab

    def blur_adjoint(x):
        full = np.zeros_like(a)
        full[crop] = x
        return _blur(full, g)

    grad = blur_adjoint(d_mean_a_total) + 2 * a * blur_adjoint(d_s_aa) + b * blur_adjoint(d_s_ab)
    return value, grad


def image_loss(render, gt, ssim_weight: float = SSIM_WEIGHT):
    """(1 - lambda) * L1 + lambda * (1 - SSIM); returns (loss, grad, l1, ssim)."""
    l1, g1 = l1_loss(render, gt)
    s, gs = ssim(render, gt)
    loss = (1 - ssim_weight) * l1 + ssim_weight * (1 - s)
    return loss, (1 - ssim_weight) * g1 - ssim_weight * gs, l1, s


def billboard_impact(fb: FrameBuffer) -> np.ndarray:
    """Per-billboard sum of blending weights (opacity times transmittance) over every pixel it reached."""
    if not fb.training:
        raise ValueError("impact needs a training-mode framebuffer")
    rec = fb.records
    return np.bincount(rec["id"], weights=rec["alpha"] * rec["trans"], minlength=fb.n_billboards)


def visibility_weight(impact, cap: float = IMPACT_CAP):
    """cap - min(impact, cap) where the impact is positive, else 0."""
    impact = np.asarray(impact, dtype=np.float64)
    return np.where(impact > 0, cap - np.minimum(impact, cap), 0.0)


def texture_reg_loss(bset: BillboardSet, weights, pattern, color_reg_weight=COLOR_REG_WEIGHT, opacity_reg_weight=OPACITY_REG_WEIGHT):
    """Visibility-weighted L1 pull of RGB offsets to 0 and opacities to ``pattern``.

    Returns ``(l_rgb, l_alpha, texture_loss, grads)`` with ``grads`` holding the
    ``color_texture`` and ``opacity_logits`` (logit) gradients of ``texture_loss``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = bset.count
    if len(weights) != n:
        raise ValueError(f"expected {n} weights, got {len(weights)}")
    if n == 0:
        return 0.0, 0.0, 0.0, {"color_texture": np.zeros(bset.color_texture.shape), "opacity_logits": np.zeros(bset.opacity_logits.shape)}
    color_texture = bset.color_texture.astype(np.float64)
    opac = sigmoid(bset.opacity_logits)
    resid = opac - np.asarray(pattern, dtype=np.float64)[None]
    per_rgb = np.abs(color_texture).mean(axis=(1, 2, 3))
    per_alpha = np.abs(resid).mean(axis=(1, 2))
    l_rgb = float(np.sum(weights * per_rgb) / n)
    l_alpha = float(np.sum(weights * per_alpha) / n)
    texels = bset.tex_size * bset.tex_size
    g_rgb = color_reg_weight * weights[:, None, None, None] * np.sign(color_texture) / (n * texels * 3)
    g_alpha = opacity_reg_weight * weights[:, None, None] * np.sign(resid) * opac * (1 - opac) / (n * texels)
    total = color_reg_weight * l_rgb + opacity_reg_weight * l_alpha
    return l_rgb, l_alpha, total, {"color_texture": g_rgb, "opacity_logits": g_alpha}


def psnr(a, b, data_range: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))
