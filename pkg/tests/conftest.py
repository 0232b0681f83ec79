import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from billboard_splatting.geometry import CameraView
from billboard_splatting.scene import BillboardSet

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_billboards(rng, n, tex_size=8, spread=0.6, dtype=np.float64, alpha_bias=0.0):
    position = rng.normal(0, spread, (n, 3))
    ls = np.log(rng.uniform(0.1, 0.5, (n, 2)))
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    sh = rng.normal(0, 0.3, (n, 16, 3))
    trgb = rng.normal(0, 0.1, (n, tex_size, tex_size, 3))
    ta = rng.normal(alpha_bias, 1.5, (n, tex_size, tex_size))
    return BillboardSet(position, ls, rot, sh, trgb, ta, dtype=dtype)


def random_camera(rng, width=64, height=64):
    eye = rng.normal(size=3)
    eye *= rng.uniform(2.5, 4.0) / np.linalg.norm(eye)
    return CameraView.look_at(eye, rng.normal(0, 0.1, 3), width, height, fov_deg=rng.uniform(35, 70))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
