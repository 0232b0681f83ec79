"""Procedural test scenes with analytic ground truth.

The quad scene is rendered by direct ray casting against opaque textured
rectangles, without touching the splatting code, so it can serve as an
independent target for fitting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraView
from .io import Dataset
from .scene import BillboardSet, fibonacci_sphere, quat_facing


@dataclass
class Quad:
    center: np.ndarray
    axis_u: np.ndarray  # half-extent vector along the first side
    axis_v: np.ndarray
    base: np.ndarray
    stripe: np.ndarray
    freq: float

    def color(self, a, b):
        """Smooth procedural texture at local coordinates (a, b) in [-1, 1]."""
        w = 0.5 + 0.5 * np.sin(np.pi * self.freq * a) * np.cos(np.pi * 0.5 * self.freq * b)
        return self.base[None] * (1 - w[:, None]) + self.stripe[None] * w[:, None]


def _rot(axis, angle):
    axis = np.asarray(axis, dtype=np.float64) / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def default_quads() -> list[Quad]:
    layout = [
        # center, size (u, v), rotation axis, angle, base, stripe, freq
        ((0.0, 0.0, 0.45), (0.75, 0.6), (0, 1, 0), 0.0, (0.85, 0.3, 0.2), (0.95, 0.8, 0.3), 1.0),
        ((-0.55, -0.25, 0.0), (0.35, 0.45), (0, 1, 0), 0.5, (0.2, 0.55, 0.85), (0.1, 0.2, 0.4), 1.5),
        ((0.55, 0.3, -0.05), (0.4, 0.3), (1, 1, 0), -0.4, (0.25, 0.75, 0.3), (0.9, 0.95, 0.6), 1.0),
        ((0.1, 0.5, -0.3), (0.45, 0.25), (1, 0, 0), 0.6, (0.7, 0.7, 0.72), (0.35, 0.2, 0.5), 2.0),
        ((-0.15, -0.45, -0.35), (0.4, 0.35), (0, 0, 1), 0.3, (0.9, 0.55, 0.75), (0.3, 0.45, 0.3), 1.0),
    ]
    quads = []
    for c, (su, sv), ax, ang, base, stripe, freq in layout:
        R = _rot(ax, ang)
        quads.append(Quad(np.array(c), R[:, 0] * su, R[:, 1] * sv, np.array(base), np.array(stripe), freq))
    return quads


def ring_cameras(n: int, size: int = 64, radius: float = 2.4, fov: float = 48.0, target=(0.0, 0.0, 0.0)):
    """Cameras on a golden-ratio spiral over the front (-z) cap, looking at ``target``.

    Consecutive indices land far apart, so every-8th hold-out views sit inside
    the training coverage rather than on its edge.
    """
    cams = []
    for i in range(n):
        az = np.radians(-45 + 90 * ((i * 0.6180339887498949 + 0.5) % 1.0))
        el = np.radians(-25 + 50 * (i + 0.5) / n)
        eye = np.array(target) + radius * np.array([np.sin(az) * np.cos(el), np.sin(el), -np.cos(az) * np.cos(el)])
        cams.append(CameraView.look_at(eye, target, size, size, fov_deg=fov))
    return cams


def _camera_rays(cam: CameraView, ss: int):
    fx, fy, cx, cy = cam.intrinsics
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    px = (np.arange(cam.width)[None, :, None, None] + offs[None, None, None, :])
    py = (np.arange(cam.height)[:, None, None, None] + offs[None, None, :, None])
    px, py = np.broadcast_arrays(px, py)
    d_cam = np.stack([(px - cx) / fx, (py - cy) / fy, np.ones_like(px)], axis=-1)
    R = cam.world_to_camera[:3, :3]
    d_world = d_cam @ R  # R^T d
    return cam.camera_center, d_world


def raycast_quads(quads, cam: CameraView, background=(0.0, 0.0, 0.0), ss: int = 3):
    """Anti-aliased color image and per-pixel view depth (center sample) of opaque quads."""
    origin, dirs = _camera_rays(cam, ss)
    shape = dirs.shape[:-1]
    d = dirs.reshape(-1, 3)
    best_t = np.full(len(d), np.inf)
    color = np.tile(np.asarray(background, dtype=np.float64), (len(d), 1))
    for q in quads:
        n = np.cross(q.axis_u, q.axis_v)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((q.center - origin) @ n) / denom
        p = origin + t[:, None] * d
        a = (p - q.center) @ q.axis_u / (q.axis_u @ q.axis_u)
        b = (p - q.center) @ q.axis_v / (q.axis_v @ q.axis_v)
        hit = (np.abs(denom) > 1e-12) & (t > 0) & (np.abs(a) <= 1) & (np.abs(b) <= 1) & (t < best_t)
        best_t[hit] = t[hit]
        color[hit] = q.color(a[hit], b[hit])
    img = color.reshape(shape + (3,)).mean(axis=(2, 3))
    return np.clip(img, 0, 1)


def sample_quad_points(quads, per_quad: int, rng):
    pts, cols = [], []
    for q in quads:
        a = rng.uniform(-1, 1, per_quad)
        b = rng.uniform(-1, 1, per_quad)
        pts.append(q.center + a[:, None] * q.axis_u + b[:, None] * q.axis_v)
        cols.append(q.color(a, b))
    return np.concatenate(pts), np.concatenate(cols)


def quad_dataset(n_views: int = 24, size: int = 64, per_quad: int = 30, seed: int = 0, noise: float = 0.01) -> Dataset:
    """Posed renders of :func:`default_quads` plus a jittered point cloud sampled on the quads."""
    rng = np.random.default_rng(seed)
    quads = default_quads()
    cams = ring_cameras(n_views, size)
    images = [raycast_quads(quads, c) for c in cams]
    pts, cols = sample_quad_points(quads, per_quad, rng)
    pts = pts + rng.normal(scale=noise, size=pts.shape)
    return Dataset(images, cams, pts, cols)


def box_billboards(half: float = 0.5, center=(0.0, 0.0, 0.0), tex_size: int = 8, opaque_logit: float = 12.0,
                   dtype=np.float64) -> BillboardSet:
    """Six opaque square billboards forming the surface of an axis-aligned cube."""
    normals = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64)
    position = np.asarray(center, dtype=np.float64) + half * normals
    rot = quat_facing(normals)
    sh = np.zeros((6, 16, 3))
    sh[:, 0, :] = (np.linspace(0.2, 0.8, 18).reshape(6, 3) - 0.5) / 0.28209479177387814
    return BillboardSet(position, np.full((6, 2), np.log(half)), rot, sh, np.zeros((6, tex_size, tex_size, 3)),
                        np.full((6, tex_size, tex_size), opaque_logit), dtype=dtype)


def sphere_cameras(n: int, size: int, radius: float = 3.0, fov: float = 45.0, target=(0.0, 0.0, 0.0)):
    eyes = fibonacci_sphere(n, target, radius)
    return [CameraView.look_at(e, target, size, size, fov_deg=fov) for e in eyes]


def box_surface_points(half: float, n: int, rng, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Uniform samples on the surface of an axis-aligned cube."""
    face = rng.integers(0, 6, n)
    ab = rng.uniform(-half, half, (n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for k in range(3):
        sel = axis == k
        others = [j for j in range(3) if j != k]
        pts[sel, k] = sign[sel] * half
        pts[sel, others[0]] = ab[sel, 0]
        pts[sel, others[1]] = ab[sel, 1]
    return pts + np.asarray(center)


def distance_to_box(points, half: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Unsigned distance from points to the surface of an axis-aligned cube."""
    p = np.abs(np.asarray(points, dtype=np.float64) - np.asarray(center)) - half
    outside = np.linalg.norm(np.maximum(p, 0), axis=1)
    inside = np.minimum(p.max(axis=1), 0)
    return np.abs(outside + inside)


# Training settings calibrated once on the five-quad scene at 64x64 and frozen.
QUAD_SCENE_CONFIG = {
    "total_steps": 3000,
    "texture_freeze_steps": 300,
    "densify_start": 300,
    "densify_end": 2400,
    "sh_finetune_steps": 0,
    "max_billboards": 400,
    "lr_scale": 0.01,
    "lr_rot": 0.005,
    "spatial_scale": 5.0,
    "lr_rgb": 0.01,
    "lr_alpha": 0.01,
}
