import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sstnet.hsi import HsiCube, synthetic_cube
from sstnet.sst import SstConfig, SstModel

settings.register_profile("default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_cfg():
    return SstConfig.desk(bands=4)


@pytest.fixture
def desk_model64(desk_cfg):
    """Double-precision desk model with every parameter non-zero."""
    model = SstModel(desk_cfg, seed=7, dtype=np.float64)
    r = np.random.default_rng(7)
    for name, p in model.params.items():
        if p.ndim == 1 or name.endswith("bias_table") or name == "tail2.w":
            p.data[...] = r.normal(size=p.shape) * 0.1 + (1.0 if name.endswith(".g") else 0.0)
    return model


@pytest.fixture
def small_cube():
    return synthetic_cube(16, 16, 8, seed=3)


@pytest.fixture
def unit_cube(rng):
    return HsiCube(rng.uniform(0.0, 1.0, size=(64, 64, 8)), (0.0, 1.0))
