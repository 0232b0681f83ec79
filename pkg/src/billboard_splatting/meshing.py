"""TSDF fusion of rendered depth maps, marching-cubes extraction and Chamfer distance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage.measure import marching_cubes

from .geometry import CameraView

TRUNCATION_VOXELS = 4.0


@dataclass
class TsdfVolume:
    origin: np.ndarray
    voxel_size: float
    dims: tuple

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        self.tsdf = np.ones(self.dims)
        self.weights = np.zeros(self.dims)

    @classmethod
    def around(cls, lo, hi, voxel_size: float, pad: int = 3) -> TsdfVolume:
        """Volume covering the box [lo, hi] with ``pad`` extra voxels on every side."""
        lo = np.asarray(lo, dtype=np.float64) - pad * voxel_size
        hi = np.asarray(hi, dtype=np.float64) + pad * voxel_size
        dims = np.ceil((hi - lo) / voxel_size).astype(int) + 1
        return cls(lo, voxel_size, tuple(dims))

    @property
    def truncation(self) -> float:
        return TRUNCATION_VOXELS * self.voxel_size

    def voxel_centers(self) -> np.ndarray:
        axes = [self.origin[i] + self.voxel_size * np.arange(self.dims[i]) for i in range(3)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack(grid, axis=-1)


def tsdf_integrate(vol: TsdfVolume, depth, cam: CameraView):
    """Fuse one depth map (view depth, 0 = no surface) with unit weight."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise ValueError("depth map does not match the camera")
    pts = vol.voxel_centers().reshape(-1, 3)
    ndc, z = cam.project(pts)
    front = z > 1e-9
    pix = cam.ndc_to_pixel(np.where(front[:, None], ndc, -10.0))
    px = np.round(pix[:, 0]).astype(np.int64)
    py = np.round(pix[:, 1]).astype(np.int64)
    inside = front & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
    d = np.zeros(len(pts))
    d[inside] = depth[py[inside], px[inside]]
    sdf = d - z
    tau = vol.truncation
    # voxels far behind the observed surface carry no information
    update = inside & (d > 0) & (sdf >= -tau)
    if not update.any():
        return
    t_new = np.clip(sdf[update] / tau, -1.0, 1.0)
    tsdf = vol.tsdf.reshape(-1)
    wts = vol.weights.reshape(-1)
    w_old = wts[update]
    tsdf[update] = (tsdf[update] * w_old + t_new) / (w_old + 1.0)
    wts[update] = w_old + 1.0


def extract_mesh(vol: TsdfVolume):
    """Zero level set of the fused volume as (vertices (n, 3), faces (m, 3)) in world units."""
    observed = vol.weights > 0
    empty = (np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    vals = vol.tsdf[observed]
    if vals.size == 0 or vals.min() > 0 or vals.max() < 0 or min(vol.dims) < 2:
        return empty
    try:
        verts, faces, _, _ = marching_cubes(vol.tsdf, level=0.0, mask=_full_cubes(observed))
    except (ValueError, RuntimeError):
        return empty
    return vol.origin + verts * vol.voxel_size, faces.astype(np.int64)


def _full_cubes(observed):
    # a cube is meshed only when all eight of its corners were observed;
    # skimage keys each cube by its far corner (i+1, j+1, k+1)
    full = np.ones(tuple(d - 1 for d in observed.shape), dtype=bool)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                full &= observed[dx:dx + full.shape[0], dy:dy + full.shape[1], dz:dz + full.shape[2]]
    mask = np.zeros_like(observed)
    mask[1:, 1:, 1:] = full
    return mask


def chamfer_distance(a, b) -> float:
    """Symmetric mean nearest-neighbour distance between two point samples."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def sample_mesh(vertices, faces, n: int, rng) -> np.ndarray:
    """Area-weighted uniform samples on a triangle mesh."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    tri = v[f]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    idx = rng.choice(len(f), size=n, p=area / area.sum())
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    t = tri[idx]
    return (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]


def fuse_scene(bset, cams, voxel_size: float, bounds=None, render_fn=None):
    """Render depth for every camera, fuse, and extract a mesh; returns (vertices, faces, volume)."""
    from .geometry import corner_points
    from .rasterizer import render_depth

    render_fn = render_fn or render_depth
    if bounds is None:
        corners = corner_points(bset.position, bset.log_scale, bset.rotation).reshape(-1, 3)
        bounds = (corners.min(axis=0), corners.max(axis=0))
    vol = TsdfVolume.around(bounds[0], bounds[1], voxel_size)
    for cam in cams:
        tsdf_integrate(vol, render_fn(bset, cam), cam)
    verts, faces = extract_mesh(vol)
    return verts, faces, vol
