"""Tiled front-to-back compositing of textured billboards."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import CameraView, plane_matrices, project_corner_aabbs, view_direction
from .scene import BillboardSet, sigmoid
from .sh import sh_to_rgb

TILE = 16
MAX_CONTRIBUTORS = 512


def sample_bilinear(texture, u, v):
    """Bilinear lookup at plane coordinates in [-1, 1]; texture is (s, s) or (s, s, c)."""
    texture = np.asarray(texture, dtype=np.float64)
    s = texture.shape[0]
    x = (u + 1.0) * 0.5 * (s - 1)
    y = (v + 1.0) * 0.5 * (s - 1)
    x0 = int(np.clip(np.floor(x), 0, s - 2))
    y0 = int(np.clip(np.floor(y), 0, s - 2))
    fx, fy = x - x0, y - y0
    return ((1 - fx) * (1 - fy) * texture[y0, x0] + fx * (1 - fy) * texture[y0, x0 + 1]
            + (1 - fx) * fy * texture[y0 + 1, x0] + fx * fy * texture[y0 + 1, x0 + 1])


def eval_color(sh, d, texture_sample):
    """Texture offset plus the clamped SH color seen along unit direction ``d``."""
    rgb, _ = sh_to_rgb(np.asarray(sh)[None], np.asarray(d, dtype=np.float64)[None])
    return np.asarray(texture_sample, dtype=np.float64) + rgb[0]


@dataclass
class TileBins:
    tile: int
    ntx: int
    nty: int
    ptr: np.ndarray
    ids: np.ndarray

    def tile_list(self, tx, ty) -> np.ndarray:
        t = ty * self.ntx + tx
        return self.ids[self.ptr[t]:self.ptr[t + 1]]


def bin_tiles(cam: CameraView, bset: BillboardSet, depth_key: np.ndarray, tile: int = TILE) -> TileBins:
    """Assign billboards to every tile their corner box overlaps, sorted by center depth then index."""
    ntx = -(-cam.width // tile)
    nty = -(-cam.height // tile)
    boxes, visible = project_corner_aabbs(cam, bset.position, bset.log_scale, bset.rotation)
    ids = np.nonzero(visible)[0]
    if len(ids) == 0:
        return TileBins(tile, ntx, nty, np.zeros(ntx * nty + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    b = boxes[ids] // tile
    nx = b[:, 1] - b[:, 0] + 1
    ny = b[:, 3] - b[:, 2] + 1
    counts = nx * ny
    owner = np.repeat(np.arange(len(ids)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = b[owner, 0] + local % nx[owner]
    ty = b[owner, 2] + local // nx[owner]
    tile_of = ty * ntx + tx
    bid = ids[owner]
    order = np.lexsort((bid, depth_key[bid], tile_of))
    tile_of, bid = tile_of[order], bid[order]
    ptr = np.zeros(ntx * nty + 1, dtype=np.int64)
    np.add.at(ptr, tile_of + 1, 1)
    return TileBins(tile, ntx, nty, np.cumsum(ptr), bid.astype(np.int64))


@dataclass
class RenderInputs:
    """Per-billboard quantities shared by the forward and backward passes."""
    mrow: np.ndarray
    plane_mat: np.ndarray
    dirs: np.ndarray
    color_sh: np.ndarray
    color_mask: np.ndarray
    opac: np.ndarray
    trgb: np.ndarray
    center_depth: np.ndarray


def prepare(bset: BillboardSet, cam: CameraView) -> RenderInputs:
    n = bset.count
    to_screen = cam.world_to_screen
    plane_mat = plane_matrices(bset.position, bset.log_scale, bset.rotation)
    combined = to_screen[None] @ plane_mat
    mrow = np.ascontiguousarray(combined[:, [0, 1, 3]][:, :, [0, 1, 3]])
    if n:
        dirs = view_direction(cam, bset.position.astype(np.float64))
        color_sh, mask = sh_to_rgb(bset.sh, dirs)
    else:
        dirs = np.zeros((0, 3))
        color_sh, mask = np.zeros((0, 3)), np.zeros((0, 3), dtype=bool)
    center_depth = bset.position.astype(np.float64) @ to_screen[3, :3] + to_screen[3, 3]
    return RenderInputs(
        mrow, plane_mat, dirs, np.ascontiguousarray(color_sh), mask,
        np.ascontiguousarray(sigmoid(bset.opacity_logits)),
        np.ascontiguousarray(bset.color_texture, dtype=np.float64),
        center_depth,
    )


@dataclass
class FrameBuffer:
    color: np.ndarray
    transmittance: np.ndarray
    depth: np.ndarray
    training: bool = False
    background: np.ndarray = None
    count: np.ndarray = None
    overflow: np.ndarray = None
    rest: np.ndarray = None
    trec: np.ndarray = None
    offsets: np.ndarray = None
    records: dict = field(default_factory=dict)
    inputs: RenderInputs = None
    camera: CameraView = None
    n_billboards: int = 0

    @property
    def overflow_count(self) -> int:
        return 0 if self.overflow is None else int(self.overflow.sum())

    def contributors(self, px: int, py: int) -> list[tuple]:
        """Ordered (id, u, v, alpha, color, depth, transmittance_before) for one pixel."""
        if not self.training:
            raise ValueError("contributor lists exist only in training mode")
        p = py * self.color.shape[1] + px
        r0, r1 = self.offsets[p], self.offsets[p] + self.count[p]
        rec = self.records
        return [
            (int(rec["id"][r]), float(rec["u"][r]), float(rec["v"][r]), float(rec["alpha"][r]),
             rec["color"][r].copy(), float(rec["depth"][r]), float(rec["trans"][r]))
            for r in range(r0, r1)
        ]


def render(bset: BillboardSet, cam: CameraView, background=(0.0, 0.0, 0.0), training: bool = False,
           max_contributors: int = MAX_CONTRIBUTORS, image_shape=None) -> FrameBuffer:
    """Composite all billboards for ``cam``; ``training`` keeps per-pixel contributor records."""
    if image_shape is not None and tuple(image_shape[:2]) != (cam.height, cam.width):
        raise ValueError(f"image shape {tuple(image_shape[:2])} does not match camera {(cam.height, cam.width)}")
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    h, w = cam.height, cam.width
    inp = prepare(bset, cam)
    bins = bin_tiles(cam, bset, inp.center_depth)
    xs, ys = cam.pixel_ndc()
    npix = h * w
    color = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    depth = np.zeros((h, w))
    count = np.zeros(npix, dtype=np.int64)
    overflow = np.zeros(npix, dtype=np.int64)
    rest = np.zeros((npix, 3))
    trec = np.ones(npix)
    tex_size = bset.tex_size

    def run(record, offsets, recs):
        _kernels.forward_tiles(
            inp.mrow, inp.color_sh, inp.opac.reshape(-1, tex_size, tex_size), inp.trgb.reshape(-1, tex_size, tex_size, 3),
            bins.ptr, bins.ids, w, h, bins.ntx, bins.tile, xs, ys, bg, max_contributors, record, offsets,
            color, trans, depth, count, overflow, rest, trec,
            recs["id"], recs["pix"], recs["u"], recs["v"], recs["alpha"], recs["color"], recs["depth"], recs["trans"],
        )

    recs = _alloc_records(0)
    offsets = np.zeros(npix + 1, dtype=np.int64)
    run(False, offsets, recs)
    if training:
        offsets[1:] = np.cumsum(count)
        recs = _alloc_records(int(offsets[-1]))
        run(True, offsets, recs)
    return FrameBuffer(
        color, trans, depth, training, bg, count, overflow, rest, trec, offsets,
        recs if training else {}, inp, cam, bset.count,
    )


def _alloc_records(n: int) -> dict:
    return {
        "id": np.zeros(n, dtype=np.int64),
        "pix": np.zeros(n, dtype=np.int64),
        "u": np.zeros(n),
        "v": np.zeros(n),
        "alpha": np.zeros(n),
        "color": np.zeros((n, 3)),
        "depth": np.zeros(n),
        "trans": np.zeros(n),
    }


def render_depth(bset: BillboardSet, cam: CameraView) -> np.ndarray:
    """Alpha-weighted expected view depth, 0 where nothing was hit."""
    return render(bset, cam).depth
