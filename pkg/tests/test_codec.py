import zipfile

import numpy as np
import pytest
from conftest import random_billboards, random_camera
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import load_obj, rasterize_textured_mesh
from PIL import Image

from billboard_splatting.codec import (
    ZERO_CODE, ContainerError, atlas_layout, decode_container, dequantize, encode_container, export_obj_atlas,
    quantize, quantize_textures, sparsify_textures, zero_fractions,
)
from billboard_splatting.geometry import CameraView
from billboard_splatting.losses import ssim
from billboard_splatting.rasterizer import render
from billboard_splatting.scene import BillboardSet, SceneMeta, gaussian_pattern_texture, logit

finite = st.floats(-10, 10, allow_nan=False)


def test_quantize_zero_and_extremes():
    assert quantize(0.0, 1.0) == ZERO_CODE
    np.testing.assert_array_equal(quantize([-1.0, 1.0, -5.0, 5.0], 1.0), [1, 255, 1, 255])
    assert dequantize(ZERO_CODE, 3.0) == 0.0
    with pytest.raises(ValueError):
        quantize([1.0], 0.0)


@given(arrays(np.float64, 20, elements=finite), st.floats(0.01, 20))
def test_quantize_is_idempotent(x, m):
    q = quantize(x, m)
    np.testing.assert_array_equal(quantize(dequantize(q, m), m), q)
    inside = np.abs(x) <= m
    assert np.all(np.abs(dequantize(q, m) - x)[inside] <= m / 254 + 1e-12)


def _views(rng, n=4):
    return [random_camera(rng) for _ in range(n)]


@pytest.fixture
def scene(rng):
    return random_billboards(rng, 60, tex_size=8, spread=0.5, dtype=np.float32), SceneMeta(center=(0.1, 0, 0), radius=2.0)


def test_round_trip(tmp_path, rng, scene):
    b, meta = scene
    path = tmp_path / "s.bbz"
    report = encode_container(b, path, meta)
    assert report["file_size"] == path.stat().st_size
    d, m2 = decode_container(path)
    for name in ("position", "log_scale", "rotation", "sh"):
        np.testing.assert_array_equal(getattr(d, name), getattr(b, name))
    np.testing.assert_allclose(m2.center, meta.center)
    assert m2.radius == meta.radius
    for cam in _views(rng):
        diff = np.abs(render(d, cam).color - render(b, cam).color)
        assert diff.reshape(-1, 3).mean(axis=0).max() < 2 / 255


def test_quantize_textures_matches_decoded(tmp_path, scene):
    b, meta = scene
    encode_container(b, tmp_path / "s.bbz", meta)
    d, _ = decode_container(tmp_path / "s.bbz")
    q = quantize_textures(b)
    np.testing.assert_array_equal(q.color_texture, d.color_texture)
    np.testing.assert_array_equal(q.opacity_logits, d.opacity_logits)


def test_encoding_is_deterministic(tmp_path, scene):
    b, meta = scene
    encode_container(b, tmp_path / "a.bbz", meta)
    encode_container(b, tmp_path / "b.bbz", meta)
    assert (tmp_path / "a.bbz").read_bytes() == (tmp_path / "b.bbz").read_bytes()


def test_truncated_rejected(tmp_path, scene):
    b, meta = scene
    path = tmp_path / "s.bbz"
    encode_container(b, path, meta)
    data = path.read_bytes()
    for cut in (10, len(data) // 2, len(data) - 30):
        bad = tmp_path / f"cut{cut}.bbz"
        bad.write_bytes(data[:cut])
        with pytest.raises(ContainerError):
            decode_container(bad)


def _rewrite(src, dst, edit):
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for info in zin.infolist():
            zout.writestr(info.filename, edit(info.filename, zin.read(info.filename)))


def test_corrupt_stream_rejected(tmp_path, scene):
    b, meta = scene
    encode_container(b, tmp_path / "s.bbz", meta)

    def flip(name, data):
        if name == "color_texture.u8":
            return bytes([data[0] ^ 1]) + data[1:]
        return data

    _rewrite(tmp_path / "s.bbz", tmp_path / "bad.bbz", flip)
    with pytest.raises(ContainerError, match="checksum"):
        decode_container(tmp_path / "bad.bbz")


def test_version_mismatch_rejected(tmp_path, scene):
    b, meta = scene
    encode_container(b, tmp_path / "s.bbz", meta)

    def bump(name, data):
        return data.replace(b'"version": 1', b'"version": 99') if name == "manifest.json" else data

    _rewrite(tmp_path / "s.bbz", tmp_path / "v.bbz", bump)
    with pytest.raises(ContainerError, match="version"):
        decode_container(tmp_path / "v.bbz")


def test_pattern_textures_are_all_zero_codes():
    s = 8
    n = 4
    alpha = np.broadcast_to(logit(gaussian_pattern_texture(s)), (n, s, s))
    b = BillboardSet(np.zeros((n, 3)), np.zeros((n, 2)), np.tile([1.0, 0, 0, 0], (n, 1)), np.zeros((n, 16, 3)),
                     np.zeros((n, s, s, 3)), alpha, dtype=np.float64)
    assert zero_fractions(b) == (1.0, 1.0)


def test_sparsify_reaches_requested_fraction(scene):
    b, _ = scene
    for frac in (0.5, 0.9, 0.99):
        z_rgb, z_alpha = zero_fractions(sparsify_textures(b, frac))
        assert z_rgb >= frac and z_alpha >= frac
    with pytest.raises(ValueError):
        sparsify_textures(b, 1.5)


def test_sparsity_sweep_is_monotone(tmp_path, scene):
    b, meta = scene
    sizes = []
    for frac in (0.0, 0.3, 0.6, 0.9, 0.99):
        rep = encode_container(sparsify_textures(b, frac), tmp_path / f"{frac}.bbz", meta)
        sizes.append(rep["texture_compressed"])
    assert sizes == sorted(sizes, reverse=True)
    assert sizes[-1] * 5 < rep["texture_raw"]


def test_empty_set_round_trip(tmp_path):
    encode_container(BillboardSet.empty(8), tmp_path / "e.bbz")
    d, _ = decode_container(tmp_path / "e.bbz")
    assert d.count == 0 and d.tex_size == 8


@pytest.mark.parametrize("n,expected", [(1, (1, 1)), (4, (2, 2)), (5, (3, 2)), (10, (4, 3))])
def test_atlas_layout(n, expected):
    assert atlas_layout(n) == expected


def test_single_billboard_obj(tmp_path, rng):
    b = random_billboards(rng, 1)
    res = export_obj_atlas(b, tmp_path / "one")
    verts, tex, faces = load_obj(res["obj"])
    assert len(verts) == 4 and len(tex) == 4 and len(faces) == 2
    assert Image.open(res["rgb_atlas"]).size == (8, 8)
    assert "map_d" in (tmp_path / "one.mtl").read_text()


def test_obj_export_matches_mesh_raster(tmp_path, rng):
    # fronto-parallel billboards, DC color only, so the baked atlas is exact up to 8-bit rounding
    n, s = 5, 8
    position = np.c_[rng.uniform(-0.6, 0.6, (n, 2)), np.linspace(0.4, -0.4, n)]
    sh = np.zeros((n, 16, 3))
    sh[:, 0] = rng.normal(0, 0.8, (n, 3))
    b = BillboardSet(position, np.log(rng.uniform(0.3, 0.5, (n, 2))), np.tile([1.0, 0, 0, 0], (n, 1)), sh,
                     rng.normal(0, 0.1, (n, s, s, 3)), rng.normal(1.0, 1.0, (n, s, s)), dtype=np.float64)
    cam = CameraView.look_at([0, 0, -3], [0, 0, 0], 64, 64, fov_deg=45)
    res = export_obj_atlas(b, tmp_path / "scene")
    rgb = np.asarray(Image.open(res["rgb_atlas"]), dtype=np.float64) / 255
    alpha = np.asarray(Image.open(res["alpha_atlas"]), dtype=np.float64) / 255
    mesh_img = rasterize_textured_mesh(res["obj"], rgb, alpha, cam)
    value, _ = ssim(mesh_img, render(b, cam).color)
    assert value > 0.8
