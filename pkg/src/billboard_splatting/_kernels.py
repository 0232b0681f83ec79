"""Numba kernels for per-pixel compositing and its backward pass.

Per-billboard plane data is passed as ``mrow`` of shape (n, 3, 3): rows 0, 1 and
3 of ``to_screen @ plane_mat`` restricted to the plane matrix columns (s_u R_0, s_v R_1, (position, 1)).
"""
import math
import os

# prefer OpenMP: probing an outdated TBB only produces a warning
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

import numba  # noqa: E402
import numpy as np  # noqa: E402
from numba import njit, prange  # noqa: E402

if os.environ.get("BBSPLAT_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["BBSPLAT_THREADS"]), numba.config.NUMBA_NUM_THREADS)))

PARALLEL_EPS = 1e-9
TRANS_MIN = 1e-4


@njit(cache=True, inline="always")
def _bilinear_coords(u, v, s):
    x = (u + 1.0) * 0.5 * (s - 1)
    y = (v + 1.0) * 0.5 * (s - 1)
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    if x0 > s - 2:
        x0 = s - 2
    if x0 < 0:
        x0 = 0
    if y0 > s - 2:
        y0 = s - 2
    if y0 < 0:
        y0 = 0
    return x0, y0, x - x0, y - y0


@njit(cache=True, parallel=True)
def forward_tiles(mrow, color_sh, opac, trgb, tile_ptr, tile_ids, width, height, ntx, tile,
                  xs, ys, bg, cap, record, rec_off,
                  out_color, out_trans, out_depth, out_count, out_overflow, out_rest, out_trec,
                  rec_id, rec_pix, rec_u, rec_v, rec_a, rec_c, rec_d, rec_trans):
    n_tiles = len(tile_ptr) - 1
    s = opac.shape[1]
    for t in prange(n_tiles):
        tx = t % ntx
        ty = t // ntx
        for py in range(ty * tile, min((ty + 1) * tile, height)):
            y = ys[py]
            for px in range(tx * tile, min((tx + 1) * tile, width)):
                x = xs[px]
                p = py * width + px
                trans = 1.0
                acc0 = 0.0
                acc1 = 0.0
                acc2 = 0.0
                rest0 = 0.0
                rest1 = 0.0
                rest2 = 0.0
                dsum = 0.0
                wsum = 0.0
                cnt = 0
                ovf = 0
                trec = 1.0
                for k in range(tile_ptr[t], tile_ptr[t + 1]):
                    b = tile_ids[k]
                    hu0 = -mrow[b, 0, 0] + x * mrow[b, 2, 0]
                    hu1 = -mrow[b, 0, 1] + x * mrow[b, 2, 1]
                    hu3 = -mrow[b, 0, 2] + x * mrow[b, 2, 2]
                    hv0 = -mrow[b, 1, 0] + y * mrow[b, 2, 0]
                    hv1 = -mrow[b, 1, 1] + y * mrow[b, 2, 1]
                    hv3 = -mrow[b, 1, 2] + y * mrow[b, 2, 2]
                    den = hu0 * hv1 - hu1 * hv0
                    if abs(den) < PARALLEL_EPS:
                        continue
                    u = (hu1 * hv3 - hu3 * hv1) / den
                    v = (hu3 * hv0 - hu0 * hv3) / den
                    if u < -1.0 or u > 1.0 or v < -1.0 or v > 1.0:
                        continue
                    z = mrow[b, 2, 0] * u + mrow[b, 2, 1] * v + mrow[b, 2, 2]
                    if z <= 0.0:
                        continue
                    x0, y0, fx, fy = _bilinear_coords(u, v, s)
                    w00 = (1.0 - fx) * (1.0 - fy)
                    w01 = fx * (1.0 - fy)
                    w10 = (1.0 - fx) * fy
                    w11 = fx * fy
                    a = (w00 * opac[b, y0, x0] + w01 * opac[b, y0, x0 + 1]
                         + w10 * opac[b, y0 + 1, x0] + w11 * opac[b, y0 + 1, x0 + 1])
                    c0 = color_sh[b, 0] + (w00 * trgb[b, y0, x0, 0] + w01 * trgb[b, y0, x0 + 1, 0]
                                           + w10 * trgb[b, y0 + 1, x0, 0] + w11 * trgb[b, y0 + 1, x0 + 1, 0])
                    c1 = color_sh[b, 1] + (w00 * trgb[b, y0, x0, 1] + w01 * trgb[b, y0, x0 + 1, 1]
                                           + w10 * trgb[b, y0 + 1, x0, 1] + w11 * trgb[b, y0 + 1, x0 + 1, 1])
                    c2 = color_sh[b, 2] + (w00 * trgb[b, y0, x0, 2] + w01 * trgb[b, y0, x0 + 1, 2]
                                           + w10 * trgb[b, y0 + 1, x0, 2] + w11 * trgb[b, y0 + 1, x0 + 1, 2])
                    w = a * trans
                    acc0 += c0 * w
                    acc1 += c1 * w
                    acc2 += c2 * w
                    dsum += z * w
                    wsum += w
                    if cnt < cap:
                        if record:
                            r = rec_off[p] + cnt
                            rec_id[r] = b
                            rec_pix[r] = p
                            rec_u[r] = u
                            rec_v[r] = v
                            rec_a[r] = a
                            rec_c[r, 0] = c0
                            rec_c[r, 1] = c1
                            rec_c[r, 2] = c2
                            rec_d[r] = z
                            rec_trans[r] = trans
                        cnt += 1
                        trec = trans * (1.0 - a)
                    else:
                        ovf += 1
                        rest0 += c0 * w
                        rest1 += c1 * w
                        rest2 += c2 * w
                    trans = trans * (1.0 - a)
                    if trans < TRANS_MIN:
                        break
                out_color[py, px, 0] = acc0 + trans * bg[0]
                out_color[py, px, 1] = acc1 + trans * bg[1]
                out_color[py, px, 2] = acc2 + trans * bg[2]
                out_trans[py, px] = trans
                out_depth[py, px] = dsum / wsum if wsum > 0.0 else 0.0
                out_count[p] = cnt
                out_overflow[p] = ovf
                out_rest[p, 0] = rest0 + trans * bg[0]
                out_rest[p, 1] = rest1 + trans * bg[1]
                out_rest[p, 2] = rest2 + trans * bg[2]
                out_trec[p] = trec


@njit(cache=True, parallel=True)
def composite_backward_pixels(rec_off, count, rest, trec, bg, dimg, rec_a, rec_c, rec_trans, g_c, g_a):
    """Per-record dL/dcolor and dL/dalpha, walking each pixel's contributors back to front."""
    npix = len(count)
    for p in prange(npix):
        cnt = count[p]
        if cnt == 0:
            continue
        off = rec_off[p]
        d0 = dimg[p, 0]
        d1 = dimg[p, 1]
        d2 = dimg[p, 2]
        if trec[p] > 1e-12:
            cb0 = rest[p, 0] / trec[p]
            cb1 = rest[p, 1] / trec[p]
            cb2 = rest[p, 2] / trec[p]
        else:
            cb0 = bg[0]
            cb1 = bg[1]
            cb2 = bg[2]
        for i in range(cnt - 1, -1, -1):
            r = off + i
            a = rec_a[r]
            trans = rec_trans[r]
            c0 = rec_c[r, 0]
            c1 = rec_c[r, 1]
            c2 = rec_c[r, 2]
            g_c[r, 0] = a * trans * d0
            g_c[r, 1] = a * trans * d1
            g_c[r, 2] = a * trans * d2
            g_a[r] = trans * ((c0 - cb0) * d0 + (c1 - cb1) * d1 + (c2 - cb2) * d2)
            cb0 = a * c0 + (1.0 - a) * cb0
            cb1 = a * c1 + (1.0 - a) * cb1
            cb2 = a * c2 + (1.0 - a) * cb2


@njit(cache=True, inline="always")
def _tex_grad(t00, t01, t10, t11, fx, fy):
    return (1.0 - fy) * (t01 - t00) + fy * (t11 - t10), (1.0 - fx) * (t10 - t00) + fx * (t11 - t01)


@njit(cache=True, parallel=True)
def scatter_billboard_grads(order, bptr, rec_pix, rec_u, rec_v, g_c, g_a, mrow, to_screen, xs, ys, width,
                            opac, trgb, g_trgb, g_logit, g_color, g_h, g_uv_out):
    """Accumulate texture, color and plane-matrix gradients per billboard in record order."""
    n = len(bptr) - 1
    s = opac.shape[1]
    half = 0.5 * (s - 1)
    for b in prange(n):
        for k in range(bptr[b], bptr[b + 1]):
            r = order[k]
            u = rec_u[r]
            v = rec_v[r]
            ga = g_a[r]
            gc0 = g_c[r, 0]
            gc1 = g_c[r, 1]
            gc2 = g_c[r, 2]
            x0, y0, fx, fy = _bilinear_coords(u, v, s)
            w00 = (1.0 - fx) * (1.0 - fy)
            w01 = fx * (1.0 - fy)
            w10 = (1.0 - fx) * fy
            w11 = fx * fy
            o00 = opac[b, y0, x0]
            o01 = opac[b, y0, x0 + 1]
            o10 = opac[b, y0 + 1, x0]
            o11 = opac[b, y0 + 1, x0 + 1]
            g_logit[b, y0, x0] += ga * w00 * o00 * (1.0 - o00)
            g_logit[b, y0, x0 + 1] += ga * w01 * o01 * (1.0 - o01)
            g_logit[b, y0 + 1, x0] += ga * w10 * o10 * (1.0 - o10)
            g_logit[b, y0 + 1, x0 + 1] += ga * w11 * o11 * (1.0 - o11)
            dax, day = _tex_grad(o00, o01, o10, o11, fx, fy)
            gx = ga * dax
            gy = ga * day
            for ch in range(3):
                gc = gc0 if ch == 0 else (gc1 if ch == 1 else gc2)
                g_trgb[b, y0, x0, ch] += gc * w00
                g_trgb[b, y0, x0 + 1, ch] += gc * w01
                g_trgb[b, y0 + 1, x0, ch] += gc * w10
                g_trgb[b, y0 + 1, x0 + 1, ch] += gc * w11
                dtx, dty = _tex_grad(trgb[b, y0, x0, ch], trgb[b, y0, x0 + 1, ch],
                                     trgb[b, y0 + 1, x0, ch], trgb[b, y0 + 1, x0 + 1, ch], fx, fy)
                gx += gc * dtx
                gy += gc * dty
                g_color[b, ch] += gc
            gu = gx * half
            gv = gy * half
            g_uv_out[r, 0] = gu
            g_uv_out[r, 1] = gv

            p = rec_pix[r]
            x = xs[p % width]
            y = ys[p // width]
            hu0 = -mrow[b, 0, 0] + x * mrow[b, 2, 0]
            hu1 = -mrow[b, 0, 1] + x * mrow[b, 2, 1]
            hu3 = -mrow[b, 0, 2] + x * mrow[b, 2, 2]
            hv0 = -mrow[b, 1, 0] + y * mrow[b, 2, 0]
            hv1 = -mrow[b, 1, 1] + y * mrow[b, 2, 1]
            hv3 = -mrow[b, 1, 2] + y * mrow[b, 2, 2]
            den = hu0 * hv1 - hu1 * hv0
            g_hu0 = (gu * (-u * hv1) + gv * (-hv3 - v * hv1)) / den
            g_hu1 = (gu * (hv3 + u * hv0) + gv * (v * hv0)) / den
            g_hu3 = (gu * (-hv1) + gv * hv0) / den
            g_hv0 = (gu * (u * hu1) + gv * (hu3 + v * hu1)) / den
            g_hv1 = (gu * (-hu3 - u * hu0) + gv * (-v * hu0)) / den
            g_hv3 = (gu * hu1 + gv * (-hu0)) / den
            for i in range(3):
                A = -to_screen[0, i] + x * to_screen[3, i]
                B = -to_screen[1, i] + y * to_screen[3, i]
                g_h[b, 0, i] += g_hu0 * A + g_hv0 * B
                g_h[b, 1, i] += g_hu1 * A + g_hv1 * B
                g_h[b, 2, i] += g_hu3 * A + g_hv3 * B

