import sys

import numpy as np
import pytest

from softfx.raster import ColorTag, DepthMap, Raster, save_png


def random_srgb(rng, h=24, w=32):
    return Raster(rng.random((h, w, 3)), ColorTag.SRGB)


def smooth_scene(rng, h, w):
    """Low-frequency colour field plus fine texture, quantized to 8 bits."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    phase = rng.uniform(0, 2 * np.pi, 3)
    base = 0.5 + 0.35 * np.sin(2 * np.pi * (xx[..., None] * (1 + np.arange(3)) + yy[..., None]) + phase)
    img = np.clip(base + 0.1 * rng.standard_normal((h, w, 3)), 0, 1)
    return np.round(img * 255) / 255


def ramp_depth(h, w):
    return np.tile(np.linspace(0.05, 1.0, h)[::-1, None], (1, w))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def real_images():
    from skimage import data

    arrays = [data.astronaut(), data.coffee(), data.chelsea(), data.rocket(), data.immunohistochemistry()]
    return [Raster(a.astype(np.float64) / 255.0, ColorTag.SRGB) for a in arrays]


def make_synth_tree(root, n_images, rng, h=48, w=64, depth_format="png"):
    """Write ``n_images`` clean PNGs and matching depth maps under ``root``."""
    from softfx.raster import write_pfm

    inp = root / "clean"
    dep = root / "depth"
    inp.mkdir(parents=True)
    dep.mkdir(parents=True)
    for i in range(n_images):
        save_png(smooth_scene(rng, h, w), inp / f"img{i:02d}.png")
        depth = ramp_depth(h, w) * rng.uniform(0.6, 1.0)
        if depth_format == "pfm":
            write_pfm(dep / f"img{i:02d}.pfm", depth)
        else:
            save_png(depth, dep / f"img{i:02d}.png", bits=16)
    return inp, dep


@pytest.fixture
def depth_flat():
    return DepthMap(np.full((24, 32), 0.5))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
