import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from quakecast.synth import SynthConfig, generate

settings.register_profile(
    "default", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow],
)
settings.load_profile("default")

torch.set_num_threads(1)


def small_synth(**kw):
    base = dict(n_stations=5, n_events=6, duration_s=2.0, lat_min=42.5, lat_max=42.62,
                lon_min=12.8, lon_max=12.95, depth_min=1.0, depth_max=3.0, seed=7)
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture(scope="session")
def small_ds():
    return generate(small_synth())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_distances(rng, n):
    pts = rng.uniform(0, 100, size=(n, 2))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d
