import csv
import json

import numpy as np
import pytest

from billboard_splatting.cli import main, parse_config_text
from billboard_splatting.io import load_png, load_scene
from billboard_splatting.optimizer import TrainConfig

CONFIG = """# short run
[train]
total_steps = 40
texture_freeze_steps = 10
densify_start = 10
densify_end = 30
densify_every = 10
log_every = 20
max_billboards = 160
tex_size = 8
sh_finetune_steps = 0
lr_scale = 0.01
spatial_scale = 5.0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synthetic", str(root / "ds"), "--views", "9", "--size", "32"]) == 0
    (root / "cfg.toml").write_text(CONFIG)
    assert main(["train", str(root / "ds"), "--config", str(root / "cfg.toml"), "--out", str(root / "s.bbz")]) == 0
    return root


def _eval_mean(capsys, args):
    capsys.readouterr()
    assert main(args) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1].split()
    assert last[0] == "mean"
    return float(last[1])


def test_parse_key_value_config():
    cfg = parse_config_text(CONFIG + 'add_sky = true\nbackground = [1, 1, 1]\nname = "x"  # trailing\n')
    assert cfg["total_steps"] == 40 and cfg["lr_scale"] == 0.01
    assert cfg["add_sky"] is True and cfg["background"] == [1, 1, 1] and cfg["name"] == "x"
    assert parse_config_text('{"total_steps": 5}') == {"total_steps": 5}
    with pytest.raises(ValueError):
        parse_config_text("no equals sign")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})


def test_eval_matches_training_log(workspace, capsys):
    rows = list(csv.DictReader(open(workspace / "s.csv")))
    mean = _eval_mean(capsys, ["eval", str(workspace / "s.bbz"), "--dataset", str(workspace / "ds"),
                               "--csv", str(workspace / "eval.csv")])
    assert mean == pytest.approx(float(rows[-1]["psnr"]), abs=1e-4)
    per_view = list(csv.DictReader(open(workspace / "eval.csv")))
    assert [int(r["view"]) for r in per_view] == [0, 8]
    assert np.mean([float(r["psnr"]) for r in per_view]) == float(rows[-1]["psnr"])


def test_render_is_reproducible(workspace):
    cams = str(workspace / "ds" / "cameras.json")
    for name in ("r1", "r2"):
        assert main(["render", str(workspace / "s.bbz"), "--camera", cams, "--out", str(workspace / name),
                     "--depth"]) == 0
    files = sorted(p.name for p in (workspace / "r1").iterdir())
    assert len([f for f in files if f.endswith(".png")]) == 9
    for f in files:
        assert (workspace / "r1" / f).read_bytes() == (workspace / "r2" / f).read_bytes()
    assert load_png(workspace / "r1" / "003.png").shape == (32, 32, 3)


def test_compress_decompress_eval(workspace, capsys):
    ds = str(workspace / "ds")
    assert main(["decompress", str(workspace / "s.bbz"), "--out", str(workspace / "s.npz")]) == 0
    assert main(["compress", str(workspace / "s.npz"), "--out", str(workspace / "again.bbz")]) == 0
    assert "texture streams" in capsys.readouterr().out
    assert main(["decompress", str(workspace / "again.bbz"), "--out", str(workspace / "again.json")]) == 0
    a = _eval_mean(capsys, ["eval", str(workspace / "s.bbz"), "--dataset", ds])
    b = _eval_mean(capsys, ["eval", str(workspace / "again.json"), "--dataset", ds])
    assert abs(a - b) < 0.5


def test_export_mesh_and_obj(workspace, capsys):
    assert main(["export-mesh", str(workspace / "s.bbz"), "--cameras", str(workspace / "ds" / "cameras.json"),
                 "--voxel", "0.05", "--out", str(workspace / "mesh.obj")]) == 0
    assert (workspace / "mesh.obj").read_text().startswith("v ")
    assert main(["export-obj", str(workspace / "s.bbz"), "--out", str(workspace / "quads")]) == 0
    assert (workspace / "quads.obj").exists() and (workspace / "quads_rgb.png").exists()


def test_steps_override(workspace, capsys):
    assert main(["train", str(workspace / "ds"), "--config", str(workspace / "cfg.toml"), "--steps", "20",
                 "--out", str(workspace / "short.npz"), "--log", str(workspace / "short.csv")]) == 0
    rows = list(csv.DictReader(open(workspace / "short.csv")))
    assert rows[-1]["step"] == "20"
    assert load_scene(workspace / "short.npz")[0].count > 0


def test_bad_arguments(workspace, capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", str(workspace / "ds"), "--out", "x.bbz", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    assert main(["eval", str(workspace / "missing.bbz"), "--dataset", str(workspace / "ds")]) == 1
    assert "error" in capsys.readouterr().err
    (workspace / "junk.bbz").write_bytes(b"not a zip")
    assert main(["decompress", str(workspace / "junk.bbz"), "--out", str(workspace / "j.npz")]) == 1
    assert main(["compress", str(workspace / "s.bbz"), "--out", str(workspace / "x.zip")]) == 1


def test_unknown_config_key_is_reported(workspace, capsys):
    (workspace / "bad.cfg").write_text(json.dumps({"nonsense": 1}))
    assert main(["train", str(workspace / "ds"), "--config", str(workspace / "bad.cfg"),
                 "--out", str(workspace / "b.bbz")]) == 1
    assert "nonsense" in capsys.readouterr().err
