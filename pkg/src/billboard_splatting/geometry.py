"""Camera model, billboard plane transforms and the closed-form ray-splat intersection.

Screen convention: after applying the world-to-screen matrix ``to_screen`` and the
perspective divide, ``x, y`` lie in [-1, 1] across the image (pixel ``i`` has
its center at ``(2 i + 1) / width - 1``) and ``+z`` points into the screen.
The last row of ``to_screen`` is the camera-space depth row, so ``to_screen[3] @ (p, 1)`` is the
view depth of world point ``p``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PARALLEL_EPS = 1e-9
NEAR_EPS = 1e-6


def projection_matrix(fx, fy, cx, cy, width, height, near=0.01, far=100.0) -> np.ndarray:
    """Pinhole projection into NDC; ``cx, cy`` are in pixels with pixel centers at integers."""
    return np.array([
        [2.0 * fx / width, 0.0, (2.0 * cx + 1.0) / width - 1.0, 0.0],
        [0.0, 2.0 * fy / height, (2.0 * cy + 1.0) / height - 1.0, 0.0],
        [0.0, 0.0, (far + near) / (far - near), -2.0 * far * near / (far - near)],
        [0.0, 0.0, 1.0, 0.0],
    ])


@dataclass
class CameraView:
    world_to_screen: np.ndarray
    width: int
    height: int
    camera_center: np.ndarray = None
    world_to_camera: np.ndarray = None
    intrinsics: tuple = None
    name: str = ""

    def __post_init__(self):
        self.world_to_screen = np.asarray(self.world_to_screen, dtype=np.float64).reshape(4, 4)
        self.width, self.height = int(self.width), int(self.height)
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        to_screen = self.world_to_screen
        if not np.all(np.isfinite(to_screen)) or abs(np.linalg.det(to_screen)) < 1e-12:
            raise ValueError("world_to_screen matrix is singular")
        if self.camera_center is None:
            # the eye is the point with x_clip = y_clip = w_clip = 0
            rows = to_screen[[0, 1, 3]]
            self.camera_center = np.linalg.solve(rows[:, :3], -rows[:, 3])
        self.camera_center = np.asarray(self.camera_center, dtype=np.float64).reshape(3)

    @classmethod
    def from_intrinsics(cls, fx, fy, cx, cy, width, height, world_to_camera, near=0.01, far=100.0, name=""):
        w2c = np.asarray(world_to_camera, dtype=np.float64).reshape(4, 4)
        if abs(np.linalg.det(w2c)) < 1e-12:
            raise ValueError("world_to_camera matrix is singular")
        to_screen = projection_matrix(fx, fy, cx, cy, width, height, near, far) @ w2c
        center = np.linalg.inv(w2c)[:3, 3]
        return cls(to_screen, width, height, center, w2c, (fx, fy, cx, cy), name)

    @classmethod
    def look_at(cls, eye, target, width, height, fov_deg=60.0, up=(0.0, 1.0, 0.0), near=0.01, far=100.0):
        """Camera at ``eye`` looking at ``target`` (camera y points down in the image)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(up, fwd)) > 0.999:
            up = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        w2c = np.eye(4)
        w2c[:3, :3] = R
        w2c[:3, 3] = -R @ eye
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls.from_intrinsics(f, f, (width - 1) / 2, (height - 1) / 2, width, height, w2c, near, far)

    def pixel_ndc(self):
        """NDC coordinates of pixel centers, as (xs of length width, ys of length height)."""
        xs = (2.0 * np.arange(self.width) + 1.0) / self.width - 1.0
        ys = (2.0 * np.arange(self.height) + 1.0) / self.height - 1.0
        return xs, ys

    def project(self, points):
        """World points (n, 3) -> (ndc_xy (n, 2), depth (n,))."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        clip = p @ self.world_to_screen[:, :3].T + self.world_to_screen[:, 3]
        depth = clip[:, 3]
        with np.errstate(divide="ignore", invalid="ignore"):
            ndc = clip[:, :2] / depth[:, None]
        return ndc, depth

    def ndc_to_pixel(self, ndc):
        ndc = np.asarray(ndc, dtype=np.float64)
        px = ((ndc[..., 0] + 1.0) * self.width - 1.0) / 2.0
        py = ((ndc[..., 1] + 1.0) * self.height - 1.0) / 2.0
        return np.stack([px, py], axis=-1)


# --- quaternions ------------------------------------------------------------

def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (n, 3, 3) from quaternions (n, 4) in (w, x, y, z) order; normalizes first."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 4)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def quat_rotmat_backward(q: np.ndarray, grad_R: np.ndarray) -> np.ndarray:
    """Gradient on raw (unnormalized) quaternions given dL/dR of :func:`quat_to_rotmat`."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 4)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    o = np.zeros_like(w)
    dR = np.stack([
        np.stack([np.stack([o, -2 * z, 2 * y], -1), np.stack([2 * z, o, -2 * x], -1), np.stack([-2 * y, 2 * x, o], -1)], 1),
        np.stack([np.stack([o, 2 * y, 2 * z], -1), np.stack([2 * y, -4 * x, -2 * w], -1), np.stack([2 * z, 2 * w, -4 * x], -1)], 1),
        np.stack([np.stack([-4 * y, 2 * x, 2 * w], -1), np.stack([2 * x, o, 2 * z], -1), np.stack([-2 * w, 2 * z, -4 * y], -1)], 1),
        np.stack([np.stack([-4 * z, -2 * w, 2 * x], -1), np.stack([2 * w, -4 * z, 2 * y], -1), np.stack([2 * x, 2 * y, o], -1)], 1),
    ], axis=1)  # (n, 4, 3, 3)
    g_qn = np.einsum("nkij,nij->nk", dR, grad_R)
    # chain through normalization: project onto the tangent of the unit sphere
    return (g_qn - qn * np.sum(g_qn * qn, axis=1, keepdims=True)) / norm


# --- planes ------------------------------------------------------------------

@dataclass
class PlaneTransform:
    h: np.ndarray

    def point(self, u, v) -> np.ndarray:
        return (self.h @ np.array([u, v, 1.0, 1.0]))[:3]

    def corners(self) -> np.ndarray:
        return np.array([self.point(a, b) for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1))])


def plane_matrices(position, log_scale, rotation) -> np.ndarray:
    """Batched plane matrices (n, 4, 4): columns are s_u * R[:, 0], s_v * R[:, 1], 0, (position, 1)."""
    position = np.asarray(position, dtype=np.float64).reshape(-1, 3)
    scale = np.exp(np.asarray(log_scale, dtype=np.float64).reshape(-1, 2))
    R = quat_to_rotmat(rotation)
    plane_mat = np.zeros((len(position), 4, 4))
    plane_mat[:, :3, 0] = R[:, :, 0] * scale[:, 0:1]
    plane_mat[:, :3, 1] = R[:, :, 1] * scale[:, 1:2]
    plane_mat[:, :3, 3] = position
    plane_mat[:, 3, 3] = 1.0
    return plane_mat


def plane_transform(position, log_scale, rotation) -> PlaneTransform:
    r = np.asarray(rotation, dtype=np.float64)
    norm = np.linalg.norm(r)
    if norm < 1e-12:
        raise ValueError("zero quaternion")
    if abs(norm - 1.0) > 1e-6:
        logger.warning("renormalizing quaternion with norm %.6g", norm)
    return PlaneTransform(plane_matrices(position, log_scale, r / norm)[0])


def homogeneous_planes(combined: np.ndarray, x, y):
    """h_u = combined^T (-1, 0, 0, x) and h_v = combined^T (0, -1, 0, y) for combined = to_screen @ plane_mat."""
    x = np.asarray(x, dtype=np.float64)[..., None]
    y = np.asarray(y, dtype=np.float64)[..., None]
    hu = -combined[..., 0, :] + x * combined[..., 3, :]
    hv = -combined[..., 1, :] + y * combined[..., 3, :]
    return hu, hv


def solve_uv(hu, hv):
    """(u, v, denominator) from homogeneous plane vectors (last axis of length 4)."""
    den = hu[..., 0] * hv[..., 1] - hu[..., 1] * hv[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (hu[..., 1] * hv[..., 3] - hu[..., 3] * hv[..., 1]) / den
        v = (hu[..., 3] * hv[..., 0] - hu[..., 0] * hv[..., 3]) / den
    return u, v, den


def ray_splat_intersect(cam: CameraView, plane: PlaneTransform, pixel):
    """Plane coordinates (u, v) hit by the ray through ``pixel`` (NDC), or None on a miss."""
    combined = cam.world_to_screen @ plane.h
    hu, hv = homogeneous_planes(combined, pixel[0], pixel[1])
    u, v, den = solve_uv(hu, hv)
    if abs(den) < PARALLEL_EPS:
        return None
    depth = combined[3] @ np.array([u, v, 0.0, 1.0])
    if depth <= 0:
        return None
    return float(u), float(v)


def hit_depth(cam: CameraView, plane: PlaneTransform, u, v) -> float:
    return float(cam.world_to_screen[3] @ plane.h @ np.array([u, v, 0.0, 1.0]))


def corner_points(position, log_scale, rotation) -> np.ndarray:
    """World-space corners (n, 4, 3) at plane coordinates (+-1, +-1)."""
    plane_mat = plane_matrices(position, log_scale, rotation)
    signs = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=np.float64)
    return plane_mat[:, None, :3, 3] + signs[None, :, 0:1] * plane_mat[:, None, :3, 0] + signs[None, :, 1:2] * plane_mat[:, None, :3, 1]


def project_corner_aabbs(cam: CameraView, position, log_scale, rotation):
    """Conservative inclusive pixel boxes (n, 4) as (x0, x1, y0, y1) plus a visibility mask.

    Billboards straddling the camera plane get the whole screen; those entirely
    behind it, or projecting outside the frame, are marked invisible.
    """
    corners = corner_points(position, log_scale, rotation)
    n = len(corners)
    to_screen = cam.world_to_screen
    clip = corners @ to_screen[:, :3].T + to_screen[:, 3]
    depth = clip[..., 3]
    boxes = np.zeros((n, 4), dtype=np.int64)
    visible = np.zeros(n, dtype=bool)
    if n == 0:
        return boxes, visible
    front = depth > NEAR_EPS
    all_front = front.all(axis=1)
    any_front = front.any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ndc = clip[..., :2] / np.where(front, depth, 1.0)[..., None]
    pix = cam.ndc_to_pixel(ndc)
    margin = 1e-4
    lo = np.ceil(pix.min(axis=1) - margin).astype(np.float64)
    hi = np.floor(pix.max(axis=1) + margin).astype(np.float64)
    lo = np.where(all_front[:, None], lo, 0.0)
    hi = np.where(all_front[:, None], hi, [cam.width - 1, cam.height - 1])
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, [cam.width - 1, cam.height - 1])
    boxes[:, 0], boxes[:, 1] = lo[:, 0], hi[:, 0]
    boxes[:, 2], boxes[:, 3] = lo[:, 1], hi[:, 1]
    visible = any_front & (lo[:, 0] <= hi[:, 0]) & (lo[:, 1] <= hi[:, 1])
    return boxes, visible


def project_corner_aabb(cam: CameraView, plane: PlaneTransform):
    """Pixel box (x0, x1, y0, y1) for a single plane, or None when off-screen."""
    plane_mat = plane.h
    corners = np.array([plane_mat[:3, 3] + a * plane_mat[:3, 0] + b * plane_mat[:3, 1] for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1))])
    to_screen = cam.world_to_screen
    clip = corners @ to_screen[:, :3].T + to_screen[:, 3]
    depth = clip[:, 3]
    if np.all(depth <= NEAR_EPS):
        return None
    if np.any(depth <= NEAR_EPS):
        return (0, cam.width - 1, 0, cam.height - 1)
    pix = cam.ndc_to_pixel(clip[:, :2] / depth[:, None])
    x0 = max(int(np.ceil(pix[:, 0].min() - 1e-4)), 0)
    x1 = min(int(np.floor(pix[:, 0].max() + 1e-4)), cam.width - 1)
    y0 = max(int(np.ceil(pix[:, 1].min() - 1e-4)), 0)
    y1 = min(int(np.floor(pix[:, 1].max() + 1e-4)), cam.height - 1)
    if x0 > x1 or y0 > y1:
        return None
    return (x0, x1, y0, y1)


def view_direction(cam: CameraView, position) -> np.ndarray:
    """Unit vectors from the camera center to each center; accepts (3,) or (n, 3)."""
    position = np.asarray(position, dtype=np.float64)
    d = position - cam.camera_center
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("billboard center coincides with the camera center")
    return d / norm
