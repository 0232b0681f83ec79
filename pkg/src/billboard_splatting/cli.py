"""Command-line entry point: ``bbsplat <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .codec import ContainerError, encode_container, export_obj_atlas
from .io import FormatError, load_cameras, load_dataset, load_scene, save_dataset, save_png, save_scene, write_mesh_ply
from .losses import psnr, ssim
from .optimizer import TrainConfig

logger = logging.getLogger("billboard_splatting")


def parse_config_text(text: str) -> dict:
    """JSON object, or ``key = value`` lines whose values are JSON literals or bare strings."""
    stripped = text.strip()
    if stripped.startswith("{"):
        return json.loads(stripped)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            if value.lower() in ("true", "false"):
                out[key] = value.lower() == "true"
            else:
                out[key] = value.strip("'\"")
    return out


def load_config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    return TrainConfig.from_dict(parse_config_text(Path(path).read_text()))


def _write_obj_mesh(path, verts, faces):
    lines = [f"v {p[0]:.7g} {p[1]:.7g} {p[2]:.7g}" for p in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def _print_report(report: dict):
    for name, s in report["streams"].items():
        print(f"{name:20s} raw {s['raw']:>10d}  compressed {s['compressed']:>10d}")
    ratio = report["texture_raw"] / max(report["texture_compressed"], 1)
    print(f"texture streams: {report['texture_raw']} -> {report['texture_compressed']} bytes ({ratio:.2f}x)")
    print(f"file size: {report['file_size']} bytes (float32 textures would be {report['float_texture_bytes']})")


# --- commands ------------------------------------------------------------------

def cmd_train(args):
    from .training import train

    cfg = load_config(args.config)
    if args.steps is not None:
        cfg.total_steps = args.steps
        cfg.densify_end = min(cfg.densify_end, cfg.total_steps)
        cfg.densify_start = min(cfg.densify_start, cfg.densify_end)
    ds = load_dataset(args.dataset)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    result = train(ds, cfg, seed=args.seed, log_path=log_path, out_path=out)
    last = result.log[-1] if result.log else None
    if last is not None:
        print(f"trained {last['step']} steps, {last['count']} billboards, test PSNR {last['psnr']:.4f} dB")
    print(f"scene: {out}  log: {log_path}")
    return 0


def cmd_render(args):
    bset, meta = load_scene(args.scene)
    cams = load_cameras(args.camera)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bg = meta.background if args.background is None else np.asarray(args.background, dtype=np.float64)
    from .rasterizer import render

    for i, cam in enumerate(cams):
        fb = render(bset, cam, bg)
        stem = cam.name or f"{i:03d}"
        stem = Path(stem).stem
        if args.format == "png":
            save_png(out / f"{stem}.png", fb.color)
        else:
            np.save(out / f"{stem}.npy", fb.color)
        if args.depth:
            np.save(out / f"{stem}_depth.npy", fb.depth)
    print(f"rendered {len(cams)} view(s) to {out}")
    return 0


def cmd_compress(args):
    bset, meta = load_scene(args.scene)
    out = Path(args.out) if args.out else Path(args.scene).with_suffix(".bbz")
    if out.suffix != ".bbz":
        raise ValueError("compressed output must end in .bbz")
    _print_report(encode_container(bset, out, meta))
    return 0


def cmd_decompress(args):
    bset, meta = load_scene(args.scene)
    out = Path(args.out)
    if out.suffix not in (".npz", ".json"):
        raise ValueError("decompressed output must end in .npz or .json")
    save_scene(out, bset, meta)
    print(f"{bset.count} billboards written to {out}")
    return 0


def cmd_export_mesh(args):
    from .meshing import fuse_scene

    bset, _ = load_scene(args.scene)
    cams = load_cameras(args.cameras)
    verts, faces, _ = fuse_scene(bset, cams, args.voxel)
    out = Path(args.out)
    if out.suffix == ".obj":
        _write_obj_mesh(out, verts, faces)
    else:
        write_mesh_ply(out, verts, faces)
    print(f"mesh: {len(verts)} vertices, {len(faces)} faces -> {out}")
    return 0


def cmd_export_obj(args):
    bset, _ = load_scene(args.scene)
    res = export_obj_atlas(bset, args.out)
    cols, rows = res["grid"]
    print(f"wrote {res['obj']} with a {cols}x{rows} texture atlas")
    return 0


def cmd_eval(args):
    from .rasterizer import render

    bset, meta = load_scene(args.scene)
    ds = load_dataset(args.dataset)
    ids = ds.test_ids if args.split == "test" else ds.train_ids if args.split == "train" else range(len(ds.images))
    rows = []
    for i in ids:
        img = render(bset, ds.cameras[i], meta.background).color
        rows.append((i, psnr(img, ds.images[i]), ssim(img, ds.images[i])[0]))
    if not rows:
        raise ValueError(f"dataset has no {args.split} views")
    print(f"{'view':>6s} {'psnr':>10s} {'ssim':>8s}")
    for i, p, s in rows:
        print(f"{i:>6d} {p:>10.4f} {s:>8.4f}")
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    print(f"{'mean':>6s} {mean_psnr:>10.4f} {mean_ssim:>8.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("view", "psnr", "ssim"))
            w.writerows([(i, repr(float(p)), repr(float(s))) for i, p, s in rows])
    return 0


def cmd_synthetic(args):
    from .synthetic import quad_dataset

    ds = quad_dataset(n_views=args.views, size=args.size, seed=args.seed)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds.images)} views and {len(ds.points)} points to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbsplat", description="Textured billboard splatting on the CPU.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a scene to a dataset directory")
    t.add_argument("dataset")
    t.add_argument("--config", help="JSON or key=value file overriding training settings")
    t.add_argument("--out", required=True, help="output scene (.bbz, .npz or .json)")
    t.add_argument("--log", help="metrics CSV (default: next to --out)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, help="override total_steps")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a scene from cameras")
    r.add_argument("scene")
    r.add_argument("--camera", required=True, help="cameras JSON")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--format", choices=("png", "npy"), default="png")
    r.add_argument("--background", type=float, nargs=3)
    r.add_argument("--depth", action="store_true", help="also save expected depth as .npy")
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("compress", help="write a .bbz container and print its size report")
    c.add_argument("scene")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="decode a scene to .npz or .json")
    d.add_argument("scene")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompress)

    m = sub.add_parser("export-mesh", help="TSDF-fuse rendered depth into a triangle mesh")
    m.add_argument("scene")
    m.add_argument("--cameras", required=True)
    m.add_argument("--voxel", type=float, default=0.01)
    m.add_argument("--out", required=True, help="mesh path (.ply or .obj)")
    m.set_defaults(func=cmd_export_mesh)

    o = sub.add_parser("export-obj", help="export billboards as textured quads with atlases")
    o.add_argument("scene")
    o.add_argument("--out", required=True, help="output prefix")
    o.set_defaults(func=cmd_export_obj)

    e = sub.add_parser("eval", help="PSNR/SSIM of a scene against a dataset")
    e.add_argument("scene")
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", choices=("test", "train", "all"), default="test")
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synthetic", help="write the procedural five-quad dataset")
    s.add_argument("out")
    s.add_argument("--views", type=int, default=24)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synthetic)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FormatError, ContainerError, ValueError, OSError, KeyError) as e:
        print(f"bbsplat {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
