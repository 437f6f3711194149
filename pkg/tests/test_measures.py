import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parapot.grids import CellGrid
from parapot.measures import (ParabolicCylinder, SpaceTimeMeasure, SpatialMeasure, StepProfile,
                              ball_mass, cylinder_mass, mollify_spacetime, mollify_spatial,
                              spacetime_from_json, spacetime_to_json)
from parapot.potentials import PotentialParams, max1, max2

from conftest import random_atoms, unit_density_2d


def test_ball_mass_dirac_inside_and_outside():
    d = SpatialMeasure.dirac([0.0, 0.0])
    assert ball_mass(d, [0.0, 0.0], 0.3) == 1.0
    assert ball_mass(d, [1.0, 0.0], 0.5) == 0.0


def test_ball_mass_disc_area():
    m = unit_density_2d(16)
    assert ball_mass(m, [0.5, 0.5], 0.25) == pytest.approx(math.pi * 0.25 ** 2, rel=1e-10)


def test_cylinder_mass_atoms():
    mu = SpaceTimeMeasure.atom([0.0, 0.0], 0.0)
    assert cylinder_mass(mu, ParabolicCylinder((0.0, 0.0), 0.0, 0.1)) == 1.0
    mu2 = SpaceTimeMeasure.atom([0.0, 0.0], 0.1)
    assert cylinder_mass(mu2, ParabolicCylinder((0.0, 0.0), 0.0, 0.1)) == 0.0


def test_cylinder_mass_lebesgue_volume():
    g = CellGrid((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), (8, 8, 8))
    mu = SpaceTimeMeasure.from_density(g, np.ones(g.shape))
    s = 0.3
    assert cylinder_mass(mu, ParabolicCylinder((0.1, -0.05), 0.02, s)) == pytest.approx(math.pi * s ** 4, rel=1e-9)


def test_mollify_dirac_conserves_mass():
    g = CellGrid((0.0, 0.0), (1.0, 1.0), (32, 32))
    m = mollify_spatial(SpatialMeasure.dirac([0.4, 0.6]), 8, grid=g)
    assert m.total == pytest.approx(1.0, abs=1e-8)
    v = m.density.values
    cx = [np.sum(v * c) / v.sum() for c in np.meshgrid(m.density.grid.centers(0), m.density.grid.centers(1), indexing="ij")]
    assert cx == pytest.approx([0.4, 0.6], abs=1e-2)


def test_mollify_reproduces_constant_in_interior():
    g = CellGrid((-2.0, -2.0), (2.0, 2.0), (40, 40))
    m = SpatialMeasure.from_density(g, np.full((40, 40), 3.0))
    out = mollify_spatial(m, 4)
    mid = out.density.values[out.density.values.shape[0] // 2, out.density.values.shape[1] // 2]
    assert mid == pytest.approx(3.0, abs=1e-8)


def test_mollify_spacetime_mass_and_tensor():
    rng = np.random.default_rng(1)
    mu = random_atoms(rng, 3)
    g = CellGrid((0.0, 0.0, 0.0), (1.0, 1.0, 0.5), (16, 16, 8))
    assert mollify_spacetime(mu, 8, grid=g).total == pytest.approx(mu.total, abs=1e-8)
    lam = SpatialMeasure(2, [[0.3, 0.3], [0.6, 0.7]], [0.5, 1.5])
    theta = StepProfile.from_triples([[0.1, 0.3, 2.0]])
    ten = SpaceTimeMeasure.product(lam, theta)
    assert mollify_spacetime(ten, 8, grid=g).total == pytest.approx(2.0 * 0.4, abs=1e-8)


def test_mollify_does_not_raise_max1():
    # the mollified density is a convex combination of grid translates, so its
    # value at x is bounded by the largest original value over x - k h
    rng = np.random.default_rng(2)
    h = 1.0 / 16
    dens_grid = CellGrid((0.0, 0.0), (1.0, 1.0), (16, 16))
    before = SpatialMeasure.from_density(dens_grid, rng.uniform(0, 2, (16, 16)))
    after = mollify_spatial(before, 8)
    p = PotentialParams(alpha=1.0, R=0.5)
    shifts = [(i * h, j * h) for i in range(-2, 3) for j in range(-2, 3) if i * i + j * j <= 4]
    for x in (0.3, 0.6):
        for y in (0.25, 0.7):
            bound = max(float(max1(before, [x - a, y - b], p)) for a, b in shifts)
            assert float(max1(after, [x, y], p)) <= bound + 1e-8


def test_mollify_atoms_gives_finite_max1():
    rng = np.random.default_rng(2)
    om = SpatialMeasure(2, rng.uniform(0.2, 0.8, (5, 2)), rng.uniform(0.1, 1, 5))
    sm = mollify_spatial(om, 8, grid=CellGrid((0.0, 0.0), (1.0, 1.0), (32, 32)))
    p = PotentialParams(alpha=1.0, R=0.5)
    assert math.isinf(float(max1(om, om.points[0], p)))
    assert math.isfinite(float(max1(sm, om.points[0], p)))


def test_mollify_does_not_raise_max2_probe_sup():
    g = CellGrid((0.0, 0.0, 0.0), (1.0, 1.0, 0.5), (16, 16, 8))
    rng = np.random.default_rng(3)
    mu = SpaceTimeMeasure.from_density(g, rng.uniform(0, 2, g.shape))
    sm = mollify_spacetime(mu, 8)  # radius 1/8 = two cells in x and t
    p = PotentialParams(beta=0.5, R=0.5, d=2.0)
    h = 1.0 / 16
    r = range(-2, 3)
    shifts = [(i * h, j * h, k * h) for i in r for j in r for k in r if i * i + j * j + k * k <= 4]
    for x, y, t in ((0.4, 0.55, 0.2), (0.7, 0.3, 0.35)):
        bound = max(float(max2(mu, [x - a, y - b], t - c, p)) for a, b, c in shifts)
        assert float(max2(sm, [x, y], t, p)) <= bound + 1e-8


def test_mollify_atomic_max2_finite():
    rng = np.random.default_rng(6)
    mu = random_atoms(rng, 4)
    g = CellGrid((0.0, 0.0, 0.0), (1.0, 1.0, 0.5), (16, 16, 8))
    sm = mollify_spacetime(mu, 4, grid=g)
    p = PotentialParams(beta=0.5, R=0.5, d=2.0)
    x, t = mu.points[0], mu.times[0]
    assert math.isinf(float(max2(mu, x, t, p)))
    assert math.isfinite(float(max2(sm, x, t, p)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_masses_monotone_in_scale(seed, s1, ds):
    rng = np.random.default_rng(seed)
    mu = random_atoms(rng, 6)
    x, t = rng.uniform(0, 1, 2), rng.uniform(0, 0.5)
    s2 = s1 + ds
    assert cylinder_mass(mu, ParabolicCylinder(x, t, s1)) <= cylinder_mass(mu, ParabolicCylinder(x, t, s2))
    om = SpatialMeasure(2, mu.points, mu.weights)
    assert ball_mass(om, x, s1) <= ball_mass(om, x, s2)


def test_json_roundtrip():
    rng = np.random.default_rng(4)
    mu = random_atoms(rng, 4, signed=True)
    back = spacetime_from_json(spacetime_to_json(mu), 2)
    assert np.allclose(np.sort(back.weights), np.sort(mu.weights))
    assert back.total == pytest.approx(mu.total)


def test_jordan_decomposition():
    rng = np.random.default_rng(5)
    mu = random_atoms(rng, 8, signed=True)
    assert mu.positive_part().total - mu.negative_part().total == pytest.approx(mu.total)
    assert mu.positive_part().is_nonnegative and mu.negative_part().is_nonnegative
