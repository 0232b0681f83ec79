"""Dataset ingestion and file formats: PLY point clouds, JSON cameras, PNG images, scene files.

Dataset directory layout::

    cameras.json   list of camera records (see ``camera_to_record``)
    points.ply     initial point cloud
    images/        one PNG per camera, referenced by the record's "image" key
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraView
from .scene import PARAM_NAMES, BillboardSet, SceneMeta

TEST_EVERY = 8

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class FormatError(ValueError):
    pass


# --- PLY ---------------------------------------------------------------------

def load_ply(path):
    """Read vertex positions and colors (in [0, 1]; mid-gray when absent)."""
    path = Path(path)
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise FormatError(f"{path}: not a PLY file")
        fmt = None
        n_vertex = None
        props = []
        current = None
        while True:
            line = f.readline()
            if not line:
                raise FormatError(f"{path}: header not terminated")
            tok = line.decode("ascii", "replace").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "end_header":
                break
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                current = tok[1]
                if current == "vertex":
                    n_vertex = int(tok[2])
            elif tok[0] == "property" and current == "vertex":
                if tok[1] == "list":
                    raise FormatError(f"{path}: list properties on vertices are unsupported")
                if tok[1] not in _PLY_TYPES:
                    raise FormatError(f"{path}: unsupported property type {tok[1]}")
                props.append((tok[2], _PLY_TYPES[tok[1]]))
        if fmt not in ("ascii", "binary_little_endian"):
            raise FormatError(f"{path}: unsupported PLY format {fmt}")
        if n_vertex is None:
            raise FormatError(f"{path}: no vertex element")
        names = [p[0] for p in props]
        for axis in "xyz":
            if axis not in names:
                raise FormatError(f"{path}: missing vertex property {axis}")
        if fmt == "ascii":
            rows = []
            for _ in range(n_vertex):
                rows.append([float(t) for t in f.readline().split()[: len(props)]])
            data = np.array(rows, dtype=np.float64).reshape(n_vertex, len(props))
            cols = {name: data[:, i] for i, name in enumerate(names)}
        else:
            dtype = np.dtype([(name, "<" + t) for name, t in props])
            raw = f.read(dtype.itemsize * n_vertex)
            if len(raw) < dtype.itemsize * n_vertex:
                raise FormatError(f"{path}: truncated vertex data")
            arr = np.frombuffer(raw, dtype=dtype, count=n_vertex)
            cols = {name: arr[name].astype(np.float64) for name in names}
    positions = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    if all(c in cols for c in ("red", "green", "blue")):
        colors = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1)
        if dict(props)["red"][0] in "iu":
            colors = colors / 255.0
    else:
        colors = np.full_like(positions, 0.5)
    return positions, colors


def write_ply(path, positions, colors=None, binary=True):
    positions = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
    n = len(positions)
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if colors is not None:
        rgb = np.clip(np.round(np.asarray(colors, dtype=np.float64).reshape(-1, 3) * 255), 0, 255).astype(np.uint8)
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields_ = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
            if colors is not None:
                fields_ += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            arr = np.zeros(n, dtype=fields_)
            arr["x"], arr["y"], arr["z"] = positions.T
            if colors is not None:
                arr["red"], arr["green"], arr["blue"] = rgb.T
            f.write(arr.tobytes())
        else:
            for i in range(n):
                row = [repr(float(c)) for c in positions[i]]
                if colors is not None:
                    row += [str(int(c)) for c in rgb[i]]
                f.write((" ".join(row) + "\n").encode("ascii"))


def write_mesh_ply(path, vertices, faces):
    vertices = np.asarray(vertices, dtype="<f4").reshape(-1, 3)
    faces = np.asarray(faces, dtype="<i4").reshape(-1, 3)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(vertices)}",
              "property float x", "property float y", "property float z",
              f"element face {len(faces)}", "property list uchar int vertex_indices", "end_header"]
    face_rec = np.zeros(len(faces), dtype=[("n", "u1"), ("idx", "<i4", 3)])
    face_rec["n"] = 3
    face_rec["idx"] = faces
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(vertices.tobytes())
        f.write(face_rec.tobytes())


# --- cameras -----------------------------------------------------------------

def camera_from_record(rec: dict) -> CameraView:
    try:
        w2c = np.asarray(rec["world_to_camera"], dtype=np.float64).reshape(4, 4)
        return CameraView.from_intrinsics(
            float(rec["fx"]), float(rec["fy"]), float(rec["cx"]), float(rec["cy"]),
            int(rec["width"]), int(rec["height"]), w2c,
            float(rec.get("near", 0.01)), float(rec.get("far", 100.0)), rec.get("name", ""),
        )
    except KeyError as e:
        raise FormatError(f"camera record missing field {e}") from None


def camera_to_record(cam: CameraView, image: str | None = None) -> dict:
    if cam.world_to_camera is None or cam.intrinsics is None:
        raise ValueError("camera was not built from intrinsics")
    fx, fy, cx, cy = cam.intrinsics
    rec = {"name": cam.name, "width": cam.width, "height": cam.height, "fx": fx, "fy": fy, "cx": cx, "cy": cy,
           "world_to_camera": cam.world_to_camera.tolist()}
    if image is not None:
        rec["image"] = image
    return rec


def load_cameras(path) -> list[CameraView]:
    return [camera_from_record(r) for r in _read_camera_records(path)]


def _read_camera_records(path) -> list[dict]:
    with open(path) as f:
        recs = json.load(f)
    if isinstance(recs, dict):
        recs = recs.get("cameras", [])
    if not isinstance(recs, list):
        raise FormatError(f"{path}: expected a JSON array of cameras")
    return recs


def save_cameras(path, cams, images=None):
    images = images or [None] * len(cams)
    with open(path, "w") as f:
        json.dump([camera_to_record(c, im) for c, im in zip(cams, images)], f, indent=1)


# --- images ------------------------------------------------------------------

def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(img) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(path, img):
    img = np.asarray(img)
    mode = "RGBA" if img.ndim == 3 and img.shape[2] == 4 else None
    Image.fromarray(to_uint8(img), mode=mode).save(path, optimize=False)


# --- datasets ----------------------------------------------------------------

@dataclass
class Dataset:
    images: list
    cameras: list
    points: np.ndarray
    colors: np.ndarray
    names: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.cameras):
            raise ValueError("every image needs a camera")
        shapes = {np.asarray(im).shape for im in self.images}
        if len(shapes) > 1:
            raise ValueError("all images must share dimensions")
        for im, cam in zip(self.images, self.cameras):
            if im.shape[:2] != (cam.height, cam.width):
                raise ValueError("image size does not match its camera")

    @property
    def test_ids(self) -> list[int]:
        return [i for i in range(len(self.images)) if i % TEST_EVERY == 0]

    @property
    def train_ids(self) -> list[int]:
        return [i for i in range(len(self.images)) if i % TEST_EVERY != 0]

    def split(self, which):
        ids = self.test_ids if which == "test" else self.train_ids
        return [self.images[i] for i in ids], [self.cameras[i] for i in ids]


def load_dataset(root) -> Dataset:
    root = Path(root)
    recs = _read_camera_records(root / "cameras.json")
    cams, images, names = [], [], []
    for i, rec in enumerate(recs):
        cams.append(camera_from_record(rec))
        image = rec.get("image", f"images/{i:03d}.png")
        images.append(load_png(root / image))
        names.append(image)
    points, colors = load_ply(root / "points.ply")
    return Dataset(images, cams, points, colors, names)


def save_dataset(root, ds: Dataset):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(ds.images):
        name = f"images/{i:03d}.png"
        save_png(root / name, img)
        names.append(name)
    save_cameras(root / "cameras.json", ds.cameras, names)
    write_ply(root / "points.ply", ds.points, ds.colors)


# --- scenes ------------------------------------------------------------------

def save_scene(path, bset: BillboardSet, meta: SceneMeta | None = None):
    """Write ``.npz`` (raw float arrays), ``.json`` (hand-editable) or ``.bbz`` (compressed container)."""
    path = Path(path)
    meta = meta or SceneMeta()
    if path.suffix == ".bbz":
        from .codec import encode_container
        return encode_container(bset, path, meta)
    if path.suffix == ".json":
        doc = {name: getattr(bset, name).tolist() for name in PARAM_NAMES}
        doc["meta"] = _meta_dict(meta)
        with open(path, "w") as f:
            json.dump(doc, f)
        return None
    with open(path, "wb") as f:
        np.savez(f, **bset.params(), **{f"meta_{k}": np.asarray(v) for k, v in _meta_dict(meta).items()})
    return None


def load_scene(path) -> tuple[BillboardSet, SceneMeta]:
    path = Path(path)
    if path.suffix == ".bbz":
        from .codec import decode_container
        return decode_container(path)
    if path.suffix == ".json":
        with open(path) as f:
            doc = json.load(f)
        try:
            bset = BillboardSet(*(np.asarray(doc[name], dtype=np.float64) for name in PARAM_NAMES), dtype=np.float64)
        except KeyError as e:
            raise FormatError(f"{path}: missing scene field {e}") from None
        return bset, SceneMeta(**doc.get("meta", {}))
    with np.load(path) as z:
        bset = BillboardSet(*(z[name] for name in PARAM_NAMES), dtype=z["position"].dtype)
        meta = SceneMeta(**{k[5:]: z[k].tolist() for k in z.files if k.startswith("meta_")})
    return bset, meta


def _meta_dict(meta: SceneMeta) -> dict:
    return {"sh_degree": int(meta.sh_degree), "center": meta.center.tolist(),
            "radius": float(meta.radius), "background": meta.background.tolist()}

