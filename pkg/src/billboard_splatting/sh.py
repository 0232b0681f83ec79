"""Real spherical harmonics up to degree 3 and their direction derivatives."""
import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
    -0.4570457994644658, 1.445305721320277, -0.5900435899266435,
)


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Basis values, shape (n, 16), for unit directions of shape (n, 3)."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty((len(d), 16))
    out[:, 0] = SH_C0
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    out[:, 4] = SH_C2[0] * x * y
    out[:, 5] = SH_C2[1] * y * z
    out[:, 6] = SH_C2[2] * (2 * zz - xx - yy)
    out[:, 7] = SH_C2[3] * x * z
    out[:, 8] = SH_C2[4] * (xx - yy)
    out[:, 9] = SH_C3[0] * y * (3 * xx - yy)
    out[:, 10] = SH_C3[1] * x * y * z
    out[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
    out[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
    out[:, 14] = SH_C3[5] * z * (xx - yy)
    out[:, 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray) -> np.ndarray:
    """Jacobian of the basis with respect to the direction, shape (n, 16, 3)."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    zero = np.zeros_like(x)
    g = np.zeros((len(d), 16, 3))
    g[:, 1, 1] = -SH_C1
    g[:, 2, 2] = SH_C1
    g[:, 3, 0] = -SH_C1
    g[:, 4] = SH_C2[0] * np.stack([y, x, zero], 1)
    g[:, 5] = SH_C2[1] * np.stack([zero, z, y], 1)
    g[:, 6] = SH_C2[2] * np.stack([-2 * x, -2 * y, 4 * z], 1)
    g[:, 7] = SH_C2[3] * np.stack([z, zero, x], 1)
    g[:, 8] = SH_C2[4] * np.stack([2 * x, -2 * y, zero], 1)
    g[:, 9] = SH_C3[0] * np.stack([6 * x * y, 3 * xx - 3 * yy, zero], 1)
    g[:, 10] = SH_C3[1] * np.stack([y * z, x * z, x * y], 1)
    g[:, 11] = SH_C3[2] * np.stack([-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z], 1)
    g[:, 12] = SH_C3[3] * np.stack([-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy], 1)
    g[:, 13] = SH_C3[4] * np.stack([4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z], 1)
    g[:, 14] = SH_C3[5] * np.stack([2 * x * z, -2 * y * z, xx - yy], 1)
    g[:, 15] = SH_C3[6] * np.stack([3 * xx - 3 * yy, -6 * x * y, zero], 1)
    return g


def sh_to_rgb(sh: np.ndarray, dirs: np.ndarray, degree: int = 3):
    """Color from SH coefficients (n, 16, 3) seen along ``dirs``.

    Returns ``(rgb, unclamped_mask)``; rgb is ``max(0.5 + sum_k sh_k * Y_k, 0)``.
    """
    nb = (degree + 1) ** 2
    basis = sh_basis(dirs)[:, :nb]
    raw = 0.5 + np.einsum("nk,nkc->nc", basis, np.asarray(sh, dtype=np.float64)[:, :nb])
    mask = raw > 0
    return np.where(mask, raw, 0.0), mask
