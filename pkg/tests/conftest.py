import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gaborsplat.config import SceneConfig
from gaborsplat.scene import SceneModel


def random_scene(rng, count=6, keyframes=4, size=32.0, moving=True,
                 config=None, max_opacity_raw=0.4, omega_span=1.5):
    """Random scene inside a size x size screen, gradcheck-friendly ranges."""
    p = count
    cfg = config or SceneConfig()
    trans = rng.normal(scale=1.5, size=(p, keyframes, 3)) if moving else np.zeros((p, keyframes, 3))
    rot = rng.normal(scale=0.3, size=(p, keyframes, 3)) if moving else np.zeros((p, keyframes, 3))
    return SceneModel(
        mu_base=np.column_stack([
            rng.uniform(size * 0.12, size * 0.88, p),
            rng.uniform(size * 0.12, size * 0.88, p),
            rng.uniform(0.0, 10.0, p),
        ]),
        log_scale=rng.uniform(0.0, 1.1, (p, 3)),
        rotation_base=rng.normal(size=(p, 4)),
        opacity_raw=rng.uniform(-1.5, max_opacity_raw, p),
        color=rng.uniform(0.0, 1.0, (p, 3)),
        omega_raw=rng.uniform(-omega_span, omega_span, (p, cfg.wave_count)),
        times=np.linspace(0.0, 1.0, keyframes),
        trans_ctrl=trans,
        rot_ctrl=rot,
        track_binding=np.full(p, -1, dtype=np.int32),
        config=cfg,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
