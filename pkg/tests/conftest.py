"""Pytest fixtures shared across all test modules."""

import numpy as np
import pytest

from airway_gvf.phantom import PhantomSpec, generate_cylinder, generate_phantom
from airway_gvf.volume import BinaryMask, ScalarVolume


@pytest.fixture
def ramp():
    """Anisotropic linear ramp: value = x + 2y + 3z in world mm."""
    spacing = (1.0, 0.5, 2.0)
    origin = (-3.0, 1.0, 2.0)
    dims = (12, 20, 8)
    axes = [origin[d] + np.arange(dims[d]) * spacing[d] for d in range(3)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    return ScalarVolume(x + 2.0 * y + 3.0 * z, spacing, origin)


@pytest.fixture
def cube_mask():
    """6x6x6 block inside a 12^3 lattice."""
    values = np.zeros((12, 12, 12), dtype=bool)
    values[3:9, 3:9, 3:9] = True
    return BinaryMask(values)


@pytest.fixture(scope="session")
def phantom3():
    """Noise-free 3-generation phantom (7 branches)."""
    return generate_phantom(PhantomSpec(generations=3))


@pytest.fixture(scope="session")
def cylinder():
    """Vertical radius-3 tube, 16 mm recorded length."""
    return generate_cylinder(radius=3.0, length=16.0)
