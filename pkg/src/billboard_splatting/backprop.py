"""Analytic gradients of a rendered image with respect to every billboard parameter."""
from __future__ import annotations

import numpy as np

from . import _kernels
from .geometry import quat_rotmat_backward, quat_to_rotmat
from .rasterizer import FrameBuffer
from .scene import BillboardSet
from .sh import sh_basis, sh_basis_grad


def bilinear_weights(u, v, s):
    """Top-left texel (x0, y0) and weights (w00, w01, w10, w11) for a lookup at (u, v)."""
    x = (u + 1.0) * 0.5 * (s - 1)
    y = (v + 1.0) * 0.5 * (s - 1)
    x0 = int(np.clip(np.floor(x), 0, s - 2))
    y0 = int(np.clip(np.floor(y), 0, s - 2))
    fx, fy = x - x0, y - y0
    return x0, y0, ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)


def bilinear_backward(dl_dsample, u, v, texture, grad_texture):
    """Scatter ``dl_dsample`` onto the four neighbouring texels of ``grad_texture``.

    Works for (s, s) textures with a scalar gradient or (s, s, c) textures with a
    length-c gradient. Returns (g_u, g_v), the gradient with respect to the
    plane coordinates (u, v).
    """
    texture = np.asarray(texture, dtype=np.float64)
    g = np.asarray(dl_dsample, dtype=np.float64)
    s = texture.shape[0]
    x0, y0, (w00, w01, w10, w11) = bilinear_weights(u, v, s)
    grad_texture[y0, x0] += g * w00
    grad_texture[y0, x0 + 1] += g * w01
    grad_texture[y0 + 1, x0] += g * w10
    grad_texture[y0 + 1, x0 + 1] += g * w11
    fx = (u + 1.0) * 0.5 * (s - 1) - x0
    fy = (v + 1.0) * 0.5 * (s - 1) - y0
    t00, t01 = texture[y0, x0], texture[y0, x0 + 1]
    t10, t11 = texture[y0 + 1, x0], texture[y0 + 1, x0 + 1]
    d_dx = (1 - fy) * (t01 - t00) + fy * (t11 - t10)
    d_dy = (1 - fx) * (t10 - t00) + fx * (t11 - t01)
    half = 0.5 * (s - 1)
    return float(np.sum(g * d_dx) * half), float(np.sum(g * d_dy) * half)


def composite_backward(fb: FrameBuffer, dl_dimage, bset: BillboardSet, grads: dict | None = None) -> dict:
    """Accumulate dL/dparams into ``grads`` (created when None) and return it.

    ``fb`` must come from ``render(bset, cam, training=True)``. Gradients do not
    flow through the depth ordering or through the hit test.
    """
    if not fb.training:
        raise ValueError("composite_backward needs a training-mode framebuffer")
    if fb.n_billboards != bset.count:
        raise ValueError("framebuffer was rendered from a different billboard set")
    if grads is None:
        grads = bset.zeros_like()
    n, tex_size = bset.count, bset.tex_size
    h, w = fb.color.shape[:2]
    dimg = np.ascontiguousarray(np.asarray(dl_dimage, dtype=np.float64).reshape(h * w, 3))
    rec = fb.records
    nrec = len(rec["id"])
    if n == 0 or nrec == 0:
        return grads

    g_c = np.zeros((nrec, 3))
    g_a = np.zeros(nrec)
    _kernels.composite_backward_pixels(
        fb.offsets, fb.count, fb.rest, fb.trec, fb.background, dimg,
        rec["alpha"], rec["color"], rec["trans"], g_c, g_a,
    )

    inp = fb.inputs
    order = np.argsort(rec["id"], kind="stable")
    bptr = np.zeros(n + 1, dtype=np.int64)
    bptr[1:] = np.cumsum(np.bincount(rec["id"], minlength=n))
    g_trgb = np.zeros((n, tex_size, tex_size, 3))
    g_logit = np.zeros((n, tex_size, tex_size))
    g_color = np.zeros((n, 3))
    g_h = np.zeros((n, 3, 3))
    g_uv = np.zeros((nrec, 2))
    xs, ys = fb.camera.pixel_ndc()
    _kernels.scatter_billboard_grads(
        order, bptr, rec["pix"], rec["u"], rec["v"], g_c, g_a, inp.mrow, fb.camera.world_to_screen,
        xs, ys, w, inp.opac, inp.trgb, g_trgb, g_logit, g_color, g_h, g_uv,
    )
    grads["color_texture"] += g_trgb
    grads["opacity_logits"] += g_logit

    # SH color: rgb = max(0.5 + sum_k sh_k Y_k(d), 0), d = normalize(position - eye)
    g_color = np.where(inp.color_mask, g_color, 0.0)
    basis = sh_basis(inp.dirs)
    grads["sh"] += basis[:, :, None] * g_color[:, None, :]
    g_dir = np.einsum("nkj,nkc,nc->nj", sh_basis_grad(inp.dirs), bset.sh.astype(np.float64), g_color)
    offs = bset.position.astype(np.float64) - fb.camera.camera_center
    dist = np.linalg.norm(offs, axis=1, keepdims=True)
    g_position = (g_dir - inp.dirs * np.sum(g_dir * inp.dirs, axis=1, keepdims=True)) / dist

    # plane matrix columns: plane_mat[:, :3, 0] = e^{s_u} R_0, plane_mat[:, :3, 1] = e^{s_v} R_1, plane_mat[:, :3, 3] = position
    g_position += g_h[:, 2]
    scale = np.exp(bset.log_scale.astype(np.float64))
    R = quat_to_rotmat(bset.rotation)
    g_R = np.zeros((n, 3, 3))
    g_R[:, :, 0] = g_h[:, 0] * scale[:, 0:1]
    g_R[:, :, 1] = g_h[:, 1] * scale[:, 1:2]
    grads["log_scale"][:, 0] += scale[:, 0] * np.sum(g_h[:, 0] * R[:, :, 0], axis=1)
    grads["log_scale"][:, 1] += scale[:, 1] * np.sum(g_h[:, 1] * R[:, :, 1], axis=1)
    grads["rotation"] += quat_rotmat_backward(bset.rotation, g_R)
    grads["position"] += g_position
    return grads
