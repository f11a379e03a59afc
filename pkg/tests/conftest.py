from __future__ import annotations

import numpy as np
import pytest

from dicflow.imaging import GrayImage, SpeckleSpec, generate_speckle

# Speckle texture dense enough that nearly every solver window carries
# two-dimensional gradient structure (roughly half coverage, like a good
# spray-paint pattern).
DENSE_SPECKLE = dict(dot_density=20.0, dot_radius_range=(2.0, 4.0), blur_sigma=1.2)


def dense_spec(width: int, height: int, seed: int = 7) -> SpeckleSpec:
    return SpeckleSpec(width, height, rng_seed=seed, **DENSE_SPECKLE)


@pytest.fixture(scope="session")
def speckle_256() -> GrayImage:
    return generate_speckle(dense_spec(256, 256))


@pytest.fixture(scope="session")
def speckle_128() -> GrayImage:
    return generate_speckle(dense_spec(128, 128, seed=11))


@pytest.fixture(scope="session")
def speckle_64() -> GrayImage:
    return generate_speckle(dense_spec(64, 64, seed=13))


def ramp_image(width: int = 64, height: int = 64, axis: str = "x") -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    return xx / width if axis == "x" else yy / height
