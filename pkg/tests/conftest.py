"""Shared fixtures: cheap analytic samples and a small rendered scene.

Analytic samples skip the renderer entirely (depth built directly from a
wave function on the pixel grid) so training / evaluation tests stay fast
and their expected values stay hand-computable.
"""

import math

import numpy as np
import pytest

from hifreq.core import DepthMap, Rng
from hifreq.raster import grid_pattern
from hifreq.synth import SinusoidParams, SinusoidTerm, height_map
from hifreq.training import Sample


def make_toy_sample(seed=0, size=96, alpha=1.5, freq=0.12, base=600.0,
                    tilt=(0.02, -0.015), scene_id="toy") -> Sample:
    """Sample whose gt is plane + one wave and whose lowfreq is the plane.

    The 'shading' channel is a smooth positive field correlated with the
    wave slope, which is all the network-facing code requires.
    """
    rng = Rng(seed)
    params = SinusoidParams([SinusoidTerm(alpha, freq, float(rng.uniform(0, 2 * math.pi)),
                                          float(rng.uniform(0, math.pi)))])
    wave = height_map(params, size, size, 1.0)
    rr, cc = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float),
                         indexing="ij")
    plane = base + tilt[0] * rr + tilt[1] * cc
    mask = np.ones((size, size))
    gx = np.gradient(wave, axis=1)
    shading = 0.6 + 0.3 * gx / max(1e-9, np.abs(gx).max())
    pattern = grid_pattern((size, size), spacing=12, line_width=1)
    return Sample(shading=shading, lowfreq=DepthMap(plane.copy(), mask.copy()),
                  pattern=pattern.astype(float),
                  gt=DepthMap(plane + wave, mask.copy()), scene=None, scene_id=scene_id)


@pytest.fixture(scope="session")
def toy_sample() -> Sample:
    return make_toy_sample()


@pytest.fixture(scope="session")
def desk_scene():
    """One fully rendered desk-preset scene (shared; ~4 s)."""
    from hifreq.cli import config as cfgmod
    from hifreq.cli.dataset import render_scene_sample
    return render_scene_sample(cfgmod.preset("desk"), 0)


def tiny_experiment_config(seed=0):
    """Small, fast variant of the desk preset for CLI round-trip tests."""
    from hifreq.cli import config as cfgmod
    from hifreq.raster import RenderConfig

    cfg = cfgmod.preset("desk")
    cfg.seed = seed
    cfg.camera = cfgmod.DeviceConfig(fx=200.0, fy=200.0, cx=39.5, cy=39.5,
                                     width=80, height=80)
    cfg.projector = cfgmod.DeviceConfig(fx=200.0, fy=200.0, cx=39.5, cy=39.5,
                                        width=80, height=80, position=(150.0, 0.0, 0.0))
    cfg.render = RenderConfig(hm_width=200, hm_height=200, mesh_pitch=1.4,
                              grid_spacing=8, line_width=1)
    cfg.sparse.stride = 2
    cfg.sparse.max_centers = 800
    cfg.train.patch = 40
    cfg.train.base_width = 8
    cfg.train.epochs = 2
    return cfg
