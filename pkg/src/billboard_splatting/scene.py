"""Billboard primitives stored as a structure of arrays, plus scene initialization."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .sh import SH_C0

logger = logging.getLogger(__name__)

SH_DEGREE = 3
INIT_OPACITY = 0.5

# parameter groups in a fixed order; codec, optimizer and densifier all iterate this
PARAM_NAMES = ("position", "log_scale", "rotation", "sh", "color_texture", "opacity_logits")


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class SceneMeta:
    sh_degree: int = SH_DEGREE
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        self.radius = float(self.radius)


class BillboardSet:
    """All billboard parameters in parallel arrays.

    Shapes, with ``n`` billboards and texture side ``tex_size``::

        position         (n, 3)        centers
        log_scale  (n, 2)        per-axis half extent, exp activation
        rotation   (n, 4)        quaternion (w, x, y, z)
        sh         (n, 16, 3)    spherical harmonic coefficients, degree 3
        color_texture      (n, tex_size, tex_size, 3)  color offsets
        opacity_logits    (n, tex_size, tex_size)     opacity logits

    Textures are indexed ``[row, col]`` with the column driven by ``u`` and the
    row driven by ``v``.
    """

    def __init__(self, position, log_scale, rotation, sh, color_texture, opacity_logits, dtype=np.float32):
        self.position = np.ascontiguousarray(position, dtype=dtype).reshape(-1, 3)
        n = len(self.position)
        self.log_scale = np.ascontiguousarray(log_scale, dtype=dtype).reshape(n, 2)
        self.rotation = np.ascontiguousarray(rotation, dtype=dtype).reshape(n, 4)
        self.sh = np.ascontiguousarray(sh, dtype=dtype).reshape(n, 16, 3)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=dtype)
        if self.opacity_logits.ndim != 3 or self.opacity_logits.shape[0] != n or self.opacity_logits.shape[1] != self.opacity_logits.shape[2]:
            raise ValueError(f"opacity_logits must have shape (n, tex_size, tex_size), got {self.opacity_logits.shape}")
        tex_size = self.opacity_logits.shape[1]
        self.color_texture = np.ascontiguousarray(color_texture, dtype=dtype).reshape(n, tex_size, tex_size, 3)
        if tex_size < 2:
            raise ValueError("texture side must be at least 2")

    @classmethod
    def empty(cls, tex_size: int = 16, dtype=np.float32) -> BillboardSet:
        return cls(
            np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 4)), np.zeros((0, 16, 3)),
            np.zeros((0, tex_size, tex_size, 3)), np.zeros((0, tex_size, tex_size)), dtype=dtype,
        )

    @property
    def count(self) -> int:
        return len(self.position)

    @property
    def tex_size(self) -> int:
        return self.opacity_logits.shape[1]

    @property
    def dtype(self):
        return self.position.dtype

    def __len__(self):
        return self.count

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def zeros_like(self) -> dict[str, np.ndarray]:
        """Gradient buffer with one float64 array per parameter group."""
        return {name: np.zeros(arr.shape, dtype=np.float64) for name, arr in self.params().items()}

    def copy(self) -> BillboardSet:
        return self.astype(self.dtype)

    def astype(self, dtype) -> BillboardSet:
        return BillboardSet(*(getattr(self, n).copy() for n in PARAM_NAMES), dtype=dtype)

    def subset(self, ids) -> BillboardSet:
        ids = np.asarray(ids, dtype=np.int64)
        return BillboardSet(*(getattr(self, n)[ids] for n in PARAM_NAMES), dtype=self.dtype)

    def permuted(self, order) -> BillboardSet:
        return self.subset(order)

    def concat(self, other: BillboardSet) -> BillboardSet:
        if other.tex_size != self.tex_size:
            raise ValueError("texture sizes differ")
        return BillboardSet(
            *(np.concatenate([getattr(self, n), getattr(other, n)]) for n in PARAM_NAMES),
            dtype=self.dtype,
        )

    def normalize_rotations(self):
        norm = np.linalg.norm(self.rotation.astype(np.float64), axis=1, keepdims=True)
        bad = norm[:, 0] < 1e-12
        norm[bad] = 1.0
        self.rotation[:] = self.rotation / norm
        self.rotation[bad] = (1.0, 0.0, 0.0, 0.0)

    def opacity(self) -> np.ndarray:
        """Opacity textures in (0, 1)."""
        return sigmoid(self.opacity_logits)

    def base_color(self) -> np.ndarray:
        """View-independent (DC) color per billboard."""
        return 0.5 + SH_C0 * self.sh[:, 0, :].astype(np.float64)


def gaussian_pattern_texture(tex_size: int) -> np.ndarray:
    """exp(-(u^2 + v^2) / 2) sampled at texel centers mapped back to [-1, 1]."""
    if tex_size < 2:
        raise ValueError("tex_size must be >= 2")
    c = np.arange(tex_size) / (tex_size - 1) * 2.0 - 1.0
    u = c[None, :]
    v = c[:, None]
    return np.exp(-(u * u + v * v) / 2.0)


def fibonacci_sphere(n: int, center=(0.0, 0.0, 0.0), radius: float = 1.0) -> np.ndarray:
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n < 0:
        raise ValueError("n must be non-negative")
    center = np.asarray(center, dtype=np.float64)
    if n == 0:
        return np.zeros((0, 3))
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return center + radius * pts


def sky_point_count(total_billboards: int) -> int:
    """Sky sphere size for a given billboard budget."""
    if total_billboards <= 10_000:
        return 0
    if total_billboards <= 20_000:
        return 2_000
    return 10_000


def farthest_point_sampling(points: np.ndarray, k: int, first: int = 0) -> np.ndarray:
    """Indices of ``k`` points chosen greedily to maximize the distance to the chosen set."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k = min(k, n)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    dist = np.sum((points - points[first]) ** 2, axis=1)
    for j in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[j] = nxt
        dist = np.minimum(dist, np.sum((points - points[nxt]) ** 2, axis=1))
    return chosen


def quat_facing(normals: np.ndarray) -> np.ndarray:
    """Quaternions whose rotation maps +z onto each unit normal."""
    normals = np.asarray(normals, dtype=np.float64)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    z = np.array([0.0, 0.0, 1.0])
    w = 1.0 + normals @ z
    xyz = np.cross(np.broadcast_to(z, normals.shape), normals)
    q = np.concatenate([w[:, None], xyz], axis=1)
    flipped = w < 1e-9
    q[flipped] = (0.0, 1.0, 0.0, 0.0)
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _knn_log_scale(positions: np.ndarray, k: int = 3, fallback: float = 1.0) -> np.ndarray:
    n = len(positions)
    if n < 2:
        return np.full(n, np.log(fallback))
    kk = min(k, n - 1)
    dist, _ = cKDTree(positions).query(positions, k=kk + 1)
    mean = dist[:, 1:].mean(axis=1)
    mean = np.where(mean > 1e-7, mean, fallback)
    return np.log(mean)


def _make_billboards(positions, colors, log_scale, rotations, tex_size, dtype):
    n = len(positions)
    sh = np.zeros((n, 16, 3))
    sh[:, 0, :] = (np.asarray(colors, dtype=np.float64) - 0.5) / SH_C0
    alpha = np.broadcast_to(logit(INIT_OPACITY * gaussian_pattern_texture(tex_size)), (n, tex_size, tex_size))
    return BillboardSet(
        positions,
        np.repeat(np.asarray(log_scale, dtype=np.float64)[:, None], 2, axis=1),
        rotations,
        sh,
        np.zeros((n, tex_size, tex_size, 3)),
        alpha,
        dtype=dtype,
    )


def init_from_point_cloud(
    positions,
    colors=None,
    target_count: int | None = None,
    add_sky: bool = False,
    tex_size: int = 16,
    sky_count: int | None = None,
    dtype=np.float32,
) -> tuple[BillboardSet, SceneMeta]:
    """Seed one billboard per (subsampled) point.

    ``sky_count`` overrides the default sky sphere size, which otherwise
    follows :func:`sky_point_count` on the final billboard budget.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(positions) == 0:
        raise ValueError("point cloud is empty")
    if colors is None:
        colors = np.full_like(positions, 0.5)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if target_count is None:
        target_count = len(positions)
    if target_count < 1:
        raise ValueError("target_count must be >= 1")

    if target_count < len(positions):
        keep = farthest_point_sampling(positions, target_count)
        positions, colors = positions[keep], colors[keep]

    center = positions.mean(axis=0)
    radius = float(np.max(np.linalg.norm(positions - center, axis=1)))
    meta = SceneMeta(center=center, radius=radius if radius > 0 else 1.0)

    n = len(positions)
    rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    bset = _make_billboards(positions, colors, _knn_log_scale(positions), rotations, tex_size, dtype)

    if add_sky:
        n_sky = sky_point_count(target_count) if sky_count is None else sky_count
        if n_sky > 0:
            pts = fibonacci_sphere(n_sky, meta.center, meta.radius)
            normals = meta.center - pts
            spacing = meta.radius * np.sqrt(4.0 * np.pi / n_sky)
            sky = _make_billboards(
                pts, np.full((n_sky, 3), 0.5), np.full(n_sky, np.log(spacing)),
                quat_facing(normals), tex_size, dtype,
            )
            bset = bset.concat(sky)
            logger.info("added %d sky billboards at radius %.3f", n_sky, meta.radius)
    return bset, meta
