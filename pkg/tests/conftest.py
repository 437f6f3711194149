import numpy as np
import pytest

from parapot.grids import CellGrid
from parapot.measures import Domain, SpaceTimeMeasure, SpatialMeasure


@pytest.fixture
def unit_box():
    return Domain.unit_box(2, 0.5)


def random_atoms(rng, n, N=2, T=0.5, signed=False):
    pts = rng.uniform(0.05, 0.95, (n, N))
    ts = rng.uniform(0.0, T, n)
    w = rng.uniform(0.1, 1.0, n)
    if signed:
        w *= rng.choice([-1.0, 1.0], n)
    return SpaceTimeMeasure(N, pts, ts, w)


def unit_density_2d(n=32):
    g = CellGrid((0.0, 0.0), (1.0, 1.0), (n, n))
    return SpatialMeasure.from_density(g, np.ones((n, n)))


def peaked_density(rng, n=24, nt=12, amp=500.0, sx=0.02, st=0.004, background=0.1):
    """Bounded space-time density on [0.3,0.7]^2 x [0.1,0.2]: background plus one sharp peak."""
    g = CellGrid((0.3, 0.3, 0.1), (0.7, 0.7, 0.2), (n, n, nt))
    c = rng.uniform([0.4, 0.4, 0.13], [0.6, 0.6, 0.17])
    X, Y, T = np.meshgrid(g.centers(0), g.centers(1), g.centers(2), indexing="ij")
    r2 = ((X - c[0]) ** 2 + (Y - c[1]) ** 2) / sx ** 2 + (T - c[2]) ** 2 / st ** 2
    return SpaceTimeMeasure.from_density(g, background + amp * np.exp(-0.5 * r2))
