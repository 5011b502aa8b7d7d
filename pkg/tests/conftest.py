"""Shared fixtures: the reference optical geometry and crystal settings."""

import numpy as np
import pytest

from pamux import CrystalParams, OpticalGeometry


@pytest.fixture(scope="session")
def geom() -> OpticalGeometry:
    """Reference geometry: inverse wavelengths 1.2/0.8/3.2 per µm,
    f = 10 cm, pupil 25 cm², pixel 100 µm²."""
    return OpticalGeometry.from_inverse_wavelengths(
        1.2e6, 0.8e6, 3.2e6,
        focal_length=0.10, pupil_area=25e-4, pixel_area=100e-12,
    )


@pytest.fixture(scope="session")
def crystal() -> CrystalParams:
    """Reference crystal: epsilon = 0.4, beta·z = 1."""
    return CrystalParams.from_dimensionless(epsilon=0.4, beta_z=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260825)
