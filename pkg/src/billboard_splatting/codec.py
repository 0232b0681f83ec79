"""Texture quantization, the ``.bbz`` container and textured-mesh export.

A ``.bbz`` file is a ZIP archive (DEFLATE, level 9, fixed timestamps) holding:

    manifest.json        format version, counts, scales, per-stream length/offset/sha256
    position.f32               (n, 3)         little-endian float32
    log_scale.f32        (n, 2)
    rotation.f32         (n, 4)
    sh.f32               (n, 16, 3)
    color_texture.u8             (n, s, s, 3)   quantized color offsets
    alpha_residual.u8    (n, s, s)      quantized opacity minus the Gaussian pattern

Quantization is symmetric around the reserved code 128, which stands for an
exact zero: ``code = 128 + round(127 * clamp(v, -m, m) / m)``.
"""
from __future__ import annotations

import hashlib
import json
import math
import zipfile
import zlib
from pathlib import Path

import numpy as np

from .scene import BillboardSet, SceneMeta, gaussian_pattern_texture, logit, sigmoid

FORMAT_VERSION = 1
ZERO_CODE = 128
_HALF_RANGE = 127
_FIXED_TIME = (1980, 1, 1, 0, 0, 0)
_OPACITY_CLIP = 1e-6
_RESIDUAL_FLOOR = 1e-6  # float32 logit/sigmoid round trips leave residuals around 1e-7

GEOMETRY_STREAMS = (("position", "position.f32"), ("log_scale", "log_scale.f32"), ("rotation", "rotation.f32"), ("sh", "sh.f32"))
TEXTURE_STREAMS = ("color_texture.u8", "alpha_residual.u8")


class ContainerError(ValueError):
    pass


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(values, m: float) -> np.ndarray:
    if not m > 0:
        raise ValueError("quantization scale must be positive")
    v = np.clip(np.asarray(values, dtype=np.float64), -m, m) / m
    return (ZERO_CODE + _round_half_away(v * _HALF_RANGE)).astype(np.uint8)


def dequantize(codes, m: float) -> np.ndarray:
    return (np.asarray(codes, dtype=np.float64) - ZERO_CODE) / _HALF_RANGE * m


def stream_scale(values) -> float:
    m = float(np.max(np.abs(values), initial=0.0))
    return m if m > 0 else 1.0


def alpha_residual(opacity, pattern) -> np.ndarray:
    opacity = np.asarray(opacity, dtype=np.float64)
    pattern = np.asarray(pattern, dtype=np.float64)
    if opacity.shape[-2:] != pattern.shape:
        raise ValueError(f"shape mismatch: {opacity.shape} vs pattern {pattern.shape}")
    return opacity - pattern


def alpha_from_residual(residual, pattern) -> np.ndarray:
    return np.asarray(residual, dtype=np.float64) + np.asarray(pattern, dtype=np.float64)


def _encode_textures(bset: BillboardSet):
    pattern = gaussian_pattern_texture(bset.tex_size)
    rgb = bset.color_texture.astype(np.float64)
    resid = alpha_residual(sigmoid(bset.opacity_logits), pattern)
    resid[np.abs(resid) < _RESIDUAL_FLOOR] = 0.0
    m_rgb, m_alpha = stream_scale(rgb), stream_scale(resid)
    return quantize(rgb, m_rgb), quantize(resid, m_alpha), m_rgb, m_alpha


def _decode_textures(q_rgb, q_alpha, m_rgb, m_alpha, tex_size):
    pattern = gaussian_pattern_texture(tex_size)
    color_texture = dequantize(q_rgb, m_rgb)
    opacity = np.clip(alpha_from_residual(dequantize(q_alpha, m_alpha), pattern), _OPACITY_CLIP, 1 - _OPACITY_CLIP)
    return color_texture, logit(opacity)


def quantize_textures(bset: BillboardSet) -> BillboardSet:
    """The set as it will look after a container round trip (float32 geometry, dequantized textures)."""
    q_rgb, q_alpha, m_rgb, m_alpha = _encode_textures(bset)
    color_texture, opacity_logits = _decode_textures(q_rgb, q_alpha, m_rgb, m_alpha, bset.tex_size)
    return BillboardSet(bset.position, bset.log_scale, bset.rotation, bset.sh, color_texture, opacity_logits, dtype=np.float32)


def _zipinfo(name):
    info = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def encode_container(bset: BillboardSet, path, meta: SceneMeta | None = None) -> dict:
    """Write ``bset`` to ``path`` and return a size report (bytes, raw vs compressed per stream)."""
    meta = meta or SceneMeta()
    q_rgb, q_alpha, m_rgb, m_alpha = _encode_textures(bset)
    streams = {}
    for name, fname in GEOMETRY_STREAMS:
        streams[fname] = np.ascontiguousarray(getattr(bset, name), dtype="<f4").tobytes()
    streams["color_texture.u8"] = q_rgb.tobytes()
    streams["alpha_residual.u8"] = q_alpha.tobytes()

    offset = 0
    entries = {}
    for fname, data in streams.items():
        entries[fname] = {"offset": offset, "length": len(data), "sha256": hashlib.sha256(data).hexdigest()}
        offset += len(data)
    manifest = {
        "format": "bbz",
        "version": FORMAT_VERSION,
        "count": bset.count,
        "tex_size": bset.tex_size,
        "sh_degree": int(meta.sh_degree),
        "scales": {"color_texture": m_rgb, "alpha_residual": m_alpha},
        "zero_code": ZERO_CODE,
        "meta": {"center": meta.center.tolist(), "radius": meta.radius, "background": meta.background.tolist()},
        "streams": entries,
    }
    path = Path(path)
    try:
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED, compresslevel=9) as zf:
            zf.writestr(_zipinfo("manifest.json"), json.dumps(manifest, indent=1, sort_keys=True))
            for fname, data in streams.items():
                zf.writestr(_zipinfo(fname), data)
        with zipfile.ZipFile(path) as zf:
            compressed = {i.filename: i.compress_size for i in zf.infolist()}
    except OSError as e:
        raise OSError(f"{path}: {e}") from e

    report = {"streams": {f: {"raw": len(d), "compressed": compressed[f]} for f, d in streams.items()}}
    report["raw_total"] = sum(len(d) for d in streams.values())
    report["texture_raw"] = sum(len(streams[f]) for f in TEXTURE_STREAMS)
    report["texture_compressed"] = sum(compressed[f] for f in TEXTURE_STREAMS)
    report["file_size"] = path.stat().st_size
    report["float_texture_bytes"] = bset.count * bset.tex_size * bset.tex_size * 4 * 4
    return report


def decode_container(path) -> tuple[BillboardSet, SceneMeta]:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != "bbz":
                raise ContainerError(f"{path}: not a billboard container")
            if manifest.get("version") != FORMAT_VERSION:
                raise ContainerError(f"{path}: unsupported container version {manifest.get('version')}")
            data = {}
            for fname, entry in manifest["streams"].items():
                raw = zf.read(fname)
                if len(raw) != entry["length"] or hashlib.sha256(raw).hexdigest() != entry["sha256"]:
                    raise ContainerError(f"{path}: checksum mismatch in stream {fname}")
                data[fname] = raw
    except (zipfile.BadZipFile, KeyError, EOFError, zlib.error, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: corrupt or truncated container ({e})") from e

    n, tex_size = int(manifest["count"]), int(manifest["tex_size"])
    shapes = {"position": (n, 3), "log_scale": (n, 2), "rotation": (n, 4), "sh": (n, 16, 3)}
    geom = {name: np.frombuffer(data[fname], dtype="<f4").reshape(shapes[name]).astype(np.float32)
            for name, fname in GEOMETRY_STREAMS}
    q_rgb = np.frombuffer(data["color_texture.u8"], dtype=np.uint8).reshape(n, tex_size, tex_size, 3)
    q_alpha = np.frombuffer(data["alpha_residual.u8"], dtype=np.uint8).reshape(n, tex_size, tex_size)
    scales = manifest["scales"]
    color_texture, opacity_logits = _decode_textures(q_rgb, q_alpha, scales["color_texture"], scales["alpha_residual"], tex_size)
    bset = BillboardSet(geom["position"], geom["log_scale"], geom["rotation"], geom["sh"], color_texture, opacity_logits,
                        dtype=np.float32)
    m = manifest.get("meta", {})
    meta = SceneMeta(int(manifest.get("sh_degree", 3)), m.get("center", (0, 0, 0)), m.get("radius", 1.0),
                     m.get("background", (0, 0, 0)))
    return bset, meta


# --- mesh export ---------------------------------------------------------------

def atlas_layout(n: int) -> tuple[int, int]:
    """(columns, rows) of the square-ish tile grid holding ``n`` textures."""
    cols = max(1, math.ceil(math.sqrt(n)))
    rows = max(1, math.ceil(n / cols))
    return cols, rows


def export_obj_atlas(bset: BillboardSet, prefix) -> dict:
    """Two triangles per billboard plus RGB and alpha atlases; only the DC color is baked."""
    from PIL import Image

    from .geometry import corner_points

    if bset.count == 0:
        raise ValueError("nothing to export")
    prefix = Path(prefix)
    n, s = bset.count, bset.tex_size
    cols, rows = atlas_layout(n)
    rgb = np.zeros((rows * s, cols * s, 3))
    alpha = np.zeros((rows * s, cols * s))
    color = np.clip(bset.base_color()[:, None, None, :] + bset.color_texture.astype(np.float64), 0, 1)
    opacity = sigmoid(bset.opacity_logits)
    for i in range(n):
        r, c = divmod(i, cols)
        rgb[r * s:(r + 1) * s, c * s:(c + 1) * s] = color[i]
        alpha[r * s:(r + 1) * s, c * s:(c + 1) * s] = opacity[i]

    corners = corner_points(bset.position, bset.log_scale, bset.rotation)  # (u, v) = (-1,-1), (1,-1), (1,1), (-1,1)
    uv_local = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=np.float64)
    aw, ah = cols * s, rows * s
    lines = [f"mtllib {prefix.name}.mtl", "usemtl billboards"]
    for i in range(n):
        for p in corners[i]:
            lines.append(f"v {p[0]:.7g} {p[1]:.7g} {p[2]:.7g}")
    for i in range(n):
        r, c = divmod(i, cols)
        for u, v in uv_local:
            px = c * s + 0.5 + (u + 1) / 2 * (s - 1)
            py = r * s + 0.5 + (v + 1) / 2 * (s - 1)
            lines.append(f"vt {px / aw:.7g} {1 - py / ah:.7g}")
    for i in range(n):
        a, b, c_, d = (4 * i + k + 1 for k in range(4))
        lines.append(f"f {a}/{a} {b}/{b} {c_}/{c_}")
        lines.append(f"f {a}/{a} {c_}/{c_} {d}/{d}")
    obj_path = Path(f"{prefix}.obj")
    obj_path.write_text("\n".join(lines) + "\n")
    rgb_name, alpha_name = f"{prefix.name}_rgb.png", f"{prefix.name}_alpha.png"
    Path(f"{prefix}.mtl").write_text(
        f"newmtl billboards\nKd 1 1 1\nmap_Kd {rgb_name}\nmap_d {alpha_name}\n"
    )
    Image.fromarray(np.round(rgb * 255).astype(np.uint8)).save(prefix.parent / rgb_name)
    Image.fromarray(np.round(alpha * 255).astype(np.uint8), mode="L").save(prefix.parent / alpha_name)
    return {"obj": obj_path, "rgb_atlas": prefix.parent / rgb_name, "alpha_atlas": prefix.parent / alpha_name,
            "grid": (cols, rows)}


# --- sparsification --------------------------------------------------------------

def _soft_threshold(x, theta):
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def sparsify_textures(bset: BillboardSet, zero_fraction: float) -> BillboardSet:
    """Soft-threshold color offsets and opacity residuals so ``zero_fraction`` of each becomes exactly zero.

    This is the proximal step of an L1 penalty, applied once after training.
    Thresholds are chosen per stream at the requested magnitude quantile.
    """
    if not 0.0 <= zero_fraction <= 1.0:
        raise ValueError("zero_fraction must lie in [0, 1]")
    pattern = gaussian_pattern_texture(bset.tex_size)
    rgb = bset.color_texture.astype(np.float64)
    resid = alpha_residual(sigmoid(bset.opacity_logits), pattern)
    out = bset.copy()
    if rgb.size:
        out.color_texture = _soft_threshold(rgb, np.quantile(np.abs(rgb), zero_fraction, method="higher")).astype(bset.dtype)
        resid = _soft_threshold(resid, np.quantile(np.abs(resid), zero_fraction, method="higher"))
        opacity = np.clip(alpha_from_residual(resid, pattern), _OPACITY_CLIP, 1 - _OPACITY_CLIP)
        out.opacity_logits = logit(opacity).astype(bset.dtype)
    return out


def zero_fractions(bset: BillboardSet) -> tuple[float, float]:
    """Fraction of quantized color-offset and opacity-residual codes equal to the zero code."""
    q_rgb, q_alpha, _, _ = _encode_textures(bset)
    if q_rgb.size == 0:
        return 0.0, 0.0
    return float(np.mean(q_rgb == ZERO_CODE)), float(np.mean(q_alpha == ZERO_CODE))
