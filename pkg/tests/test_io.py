import json

import numpy as np
import pytest
from conftest import random_billboards
from hypothesis import given
from hypothesis import strategies as st

from billboard_splatting.geometry import CameraView
from billboard_splatting.io import (
    Dataset, FormatError, camera_from_record, camera_to_record, load_cameras, load_dataset, load_png, load_ply,
    load_scene, save_cameras, save_dataset, save_png, save_scene, write_mesh_ply, write_ply,
)
from billboard_splatting.scene import SceneMeta

ASCII_PLY = """ply
format ascii 1.0
comment three points
element vertex 3
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
0 0 0 255 0 0
1 0 0 0 255 0
0 1 0 0 0 255
"""


def test_ascii_ply(tmp_path):
    (tmp_path / "p.ply").write_text(ASCII_PLY)
    pos, col = load_ply(tmp_path / "p.ply")
    np.testing.assert_array_equal(pos, [[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    np.testing.assert_array_equal(col, np.eye(3))


def test_ply_without_colors_is_gray(tmp_path):
    write_ply(tmp_path / "p.ply", np.zeros((4, 3)))
    _, col = load_ply(tmp_path / "p.ply")
    assert np.all(col == 0.5)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, rng, binary):
    pos = rng.normal(size=(50, 3)).astype(np.float32)
    col = rng.integers(0, 256, (50, 3)) / 255
    write_ply(tmp_path / "p.ply", pos, col, binary=binary)
    p2, c2 = load_ply(tmp_path / "p.ply")
    np.testing.assert_array_equal(p2, pos)
    np.testing.assert_allclose(c2, col, atol=1e-12)


@pytest.mark.parametrize("text", [
    "plyx\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n",
    "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n",
])
def test_malformed_ply(tmp_path, text):
    (tmp_path / "bad.ply").write_text(text)
    with pytest.raises(FormatError):
        load_ply(tmp_path / "bad.ply")


def test_truncated_binary_ply(tmp_path, rng):
    write_ply(tmp_path / "p.ply", rng.normal(size=(10, 3)))
    data = (tmp_path / "p.ply").read_bytes()
    (tmp_path / "t.ply").write_bytes(data[:-5])
    with pytest.raises(FormatError):
        load_ply(tmp_path / "t.ply")


def test_mesh_ply_header(tmp_path):
    write_mesh_ply(tmp_path / "m.ply", np.eye(3), [[0, 1, 2]])
    head = (tmp_path / "m.ply").read_bytes().split(b"end_header")[0].decode()
    assert "element vertex 3" in head and "element face 1" in head


def _record(w2c=np.eye(4)):
    return {"width": 32, "height": 24, "fx": 30.0, "fy": 30.0, "cx": 15.5, "cy": 11.5,
            "world_to_camera": np.asarray(w2c).tolist()}


def test_identity_camera_maps_axis_to_center():
    cam = camera_from_record(_record())
    ndc, depth = cam.project([[0, 0, 5.0]])
    np.testing.assert_allclose(ndc, [[0, 0]], atol=1e-15)
    assert depth[0] == pytest.approx(5.0)


def test_translation_only_changes_translation_column():
    w2c = np.eye(4)
    w2c[:3, 3] = [0.5, -1, 2]
    a = camera_from_record(_record()).world_to_screen
    b = camera_from_record(_record(w2c)).world_to_screen
    np.testing.assert_array_equal(a[:, :3], b[:, :3])
    assert not np.allclose(a[:, 3], b[:, 3])
    np.testing.assert_allclose(b[:, 3], a[:, :3] @ w2c[:3, 3] + a[:, 3])


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(2, 5))
def test_camera_record_round_trip(x, y, z):
    cam = CameraView.look_at([0.3, -0.2, -3], [0, 0, 0], 40, 30, fov_deg=55)
    back = camera_from_record(json.loads(json.dumps(camera_to_record(cam))))
    p = [[x, y, z - 3]]
    np.testing.assert_allclose(back.project(p)[0], cam.project(p)[0], atol=1e-12)
    np.testing.assert_allclose(back.camera_center, cam.camera_center, atol=1e-12)


def test_camera_missing_field():
    rec = _record()
    del rec["fx"]
    with pytest.raises(FormatError, match="fx"):
        camera_from_record(rec)


def test_save_load_cameras(tmp_path):
    cams = [CameraView.look_at([0, 0, -3], [0, 0, 0], 16, 16), CameraView.look_at([1, 0, -3], [0, 0, 0], 16, 16)]
    save_cameras(tmp_path / "c.json", cams)
    back = load_cameras(tmp_path / "c.json")
    for a, b in zip(cams, back):
        np.testing.assert_allclose(a.world_to_screen, b.world_to_screen)


def test_png_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (8, 9, 3)) / 255
    save_png(tmp_path / "a.png", img)
    np.testing.assert_allclose(load_png(tmp_path / "a.png"), img, atol=1e-12)


def _tiny_dataset(rng, n=10):
    cams = [CameraView.look_at([np.sin(i), 0, -3], [0, 0, 0], 12, 12) for i in range(n)]
    images = [rng.integers(0, 256, (12, 12, 3)) / 255 for _ in range(n)]
    return Dataset(images, cams, rng.normal(size=(20, 3)).astype(np.float32), rng.integers(0, 256, (20, 3)) / 255)


def test_every_eighth_view_is_held_out(rng):
    ds = _tiny_dataset(rng, 17)
    assert ds.test_ids == [0, 8, 16]
    assert len(ds.train_ids) == 14
    imgs, cams = ds.split("test")
    assert cams[1] is ds.cameras[8]


def test_dataset_round_trip(tmp_path, rng):
    ds = _tiny_dataset(rng)
    save_dataset(tmp_path / "ds", ds)
    back = load_dataset(tmp_path / "ds")
    assert len(back.images) == 10
    for a, b in zip(ds.images, back.images):
        np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_array_equal(back.points, ds.points)
    np.testing.assert_allclose(back.cameras[3].world_to_screen, ds.cameras[3].world_to_screen)


def test_dataset_validation(rng):
    with pytest.raises(ValueError):
        Dataset([np.zeros((4, 4, 3))], [], np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        Dataset([np.zeros((4, 4, 3))], [CameraView.look_at([0, 0, -3], [0, 0, 0], 5, 4)], np.zeros((1, 3)),
                np.zeros((1, 3)))


@pytest.mark.parametrize("suffix", [".npz", ".json", ".bbz"])
def test_scene_round_trip(tmp_path, rng, suffix):
    b = random_billboards(rng, 7, tex_size=4, dtype=np.float32)
    meta = SceneMeta(center=(1, 2, 3), radius=4.0, background=(0.1, 0.2, 0.3))
    save_scene(tmp_path / f"s{suffix}", b, meta)
    b2, m2 = load_scene(tmp_path / f"s{suffix}")
    np.testing.assert_array_equal(b2.position, b.position)
    np.testing.assert_array_equal(b2.sh, b.sh)
    np.testing.assert_allclose(m2.background, meta.background)
    assert m2.radius == 4.0
    if suffix != ".bbz":
        np.testing.assert_array_equal(b2.opacity_logits, b.opacity_logits)


def test_json_scene_missing_field(tmp_path):
    (tmp_path / "s.json").write_text('{"position": []}')
    with pytest.raises(FormatError):
        load_scene(tmp_path / "s.json")
