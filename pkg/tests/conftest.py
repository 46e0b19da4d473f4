"""Shared fixtures: small geometries and grids sized for fast tests."""

import numpy as np
import pytest

from cfmar.geometry import DetectorSpec, ScanGeometry
from cfmar.volume import GridSpec


@pytest.fixture
def small_geom():
    """12 views over 240 degrees, 24x24 detector; enough for projection tests."""
    return ScanGeometry(
        num_views=12,
        start_angle=0.0,
        angular_increment=20.0,
        source_to_isocenter=300.0,
        source_to_detector=600.0,
        detector=DetectorSpec(rows=24, cols=24, pixel_pitch=2.0),
    )


@pytest.fixture
def small_grid():
    return GridSpec.centered((16, 16, 16), (2.0, 2.0, 2.0))


def random_grid(rng, max_dim=16, span=30.0):
    """Random grid with a non-symmetric origin.

    Centered grids put voxel projections exactly on half-integer detector
    coordinates for symmetric geometries, where round-to-nearest is a
    measure-zero tie; a jittered origin keeps rounding well conditioned.
    """
    dims = tuple(int(x) for x in rng.integers(3, max_dim + 1, 3))
    spacing = tuple(float(s) for s in rng.uniform(0.5, 3.0, 3))
    jitter = rng.uniform(0.05, 0.45, 3)
    origin = tuple(
        -(n - 1) / 2.0 * s + float(j) + float(rng.uniform(-span, span)) / 10.0
        for n, s, j in zip(dims, spacing, jitter)
    )
    return GridSpec(dims, spacing, origin)
