import numpy as np
import pytest

from ctproj import phantom as ph
from ctproj.volume import HuVolume


def make_phantom_spec(seed=7, dims=(64, 64, 64), lesions=(), noise=True):
    """Small two-lung phantom used across the test modules."""
    return ph.PhantomSpec(
        dims=dims,
        rng_seed=seed,
        body=ph.Ellipsoid((31.5, 31.5, 31.5), (28, 26, 30)),
        lungs=(ph.Ellipsoid((18, 32, 32), (9, 12, 20)),
               ph.Ellipsoid((45, 32, 32), (9, 12, 20))),
        lesions=tuple(lesions),
        noise=noise,
    )


@pytest.fixture(scope="session")
def small_phantom():
    spec = make_phantom_spec()
    vol, mask, inv = ph.generate_phantom(spec)
    return spec, vol, mask, inv


def random_volume(seed, dims, lo=-1000, hi=200):
    rng = np.random.default_rng(seed)
    data = rng.integers(lo, hi, size=dims, endpoint=True).astype(np.int16)
    return HuVolume(dims, (1.0, 1.0, 1.0), data)
