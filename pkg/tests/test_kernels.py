import math

import numpy as np
import pytest
from scipy import integrate

from parapot.grids import CellGrid, SpaceTimeGrid
from parapot.kernels import GreenConfig, TruncationError, apply_G, duhamel, gauss, green_box
from parapot.measures import Domain, SpaceTimeMeasure, SpatialMeasure
from parapot.constants import c20
from parapot.potentials import wolff_atoms_field

from conftest import random_atoms

BOX = Domain.unit_box(2, 0.5)


def test_gauss_examples():
    assert gauss([0.0, 0.0], 1 / (4 * math.pi)) == pytest.approx(1.0)
    assert gauss([0.3, 0.1], -1.0) == 0.0


@pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
def test_gauss_normalized(t):
    v, _ = integrate.quad(lambda x: gauss([x], t), -np.inf, np.inf, epsabs=0, epsrel=1e-12)
    assert v == pytest.approx(1.0, abs=1e-8)


def test_box_kernel_small_time_matches_free():
    t = 1e-4
    assert green_box([0.5, 0.5], t, [0.5, 0.5], BOX) == pytest.approx(gauss([0.0, 0.0], t), rel=1e-6)


def test_box_kernel_vanishes_on_boundary():
    for x in ([0.0, 0.4], [1.0, 0.7], [0.3, 1.0]):
        assert abs(green_box(x, 0.05, [0.5, 0.5], BOX)) < 1e-10


def test_reflections_vs_eigen():
    rng = np.random.default_rng(20)
    refl = GreenConfig(method="reflections", images=12)
    eig = GreenConfig(method="eigen", modes=256)
    t = 1 / 8
    for _ in range(50):
        x, y = rng.uniform(0.05, 0.95, 2), rng.uniform(0.05, 0.95, 2)
        a, b = green_box(x, t, y, BOX, refl), green_box(x, t, y, BOX, eig)
        assert a == pytest.approx(b, rel=1e-8)


def test_truncation_guard():
    with pytest.raises(TruncationError):
        green_box([0.5, 0.5], 1e-4, [0.5, 0.5], BOX, GreenConfig(method="eigen", modes=4))


def test_apply_G_dirac_equals_kernel():
    grid = SpaceTimeGrid((0.0, 0.0), (1.0, 1.0), 8, 0.5, 6)
    y0 = [0.3, 0.6]
    f = apply_G(SpatialMeasure.dirac(y0), grid, BOX)
    xs, ts = grid.spatial_points(), grid.times
    vals = f.values.reshape(len(xs), len(ts))
    for i in (3, 20, 50):
        for k in (0, 5):
            assert vals[i, k] == pytest.approx(green_box(xs[i], ts[k], y0, BOX), rel=1e-10)


def test_heat_content_decreases_and_domination():
    g = CellGrid((0.0, 0.0), (1.0, 1.0), (16, 16))
    rng = np.random.default_rng(21)
    om = SpatialMeasure.from_density(g, rng.uniform(0, 1, (16, 16)))
    grid = SpaceTimeGrid((0.0, 0.0), (1.0, 1.0), 32, 0.5, 10)
    box = apply_G(om, grid, BOX).values
    free = apply_G(om, grid, BOX, whole_space=True).values
    assert np.all(box <= free + 1e-8)
    heat = box.sum(axis=tuple(range(box.ndim - 1)))
    assert np.all(np.diff(heat) <= 1e-12)


def test_duhamel_atom_is_shifted_kernel():
    y0, tau = [0.4, 0.5], 0.1
    grid = SpaceTimeGrid((0.0, 0.0), (1.0, 1.0), 8, 0.5, 10)
    f = duhamel(SpaceTimeMeasure.atom(y0, tau), grid, BOX).values
    xs, ts = grid.spatial_points(), grid.times
    vals = f.reshape(len(xs), len(ts))
    for k, t in enumerate(ts):
        want = green_box(xs[10], t - tau, y0, BOX) if t > tau else 0.0
        assert vals[10, k] == pytest.approx(want, rel=1e-10, abs=1e-14)


def test_duhamel_constant_force_positive_bounded():
    g = CellGrid((0.0, 0.0, 0.0), (1.0, 1.0, 0.5), (8, 8, 8))
    mu = SpaceTimeMeasure.from_density(g, np.ones(g.shape))
    grid = SpaceTimeGrid((0.0, 0.0), (1.0, 1.0), 8, 0.5, 8)
    v = duhamel(mu, grid, BOX).values
    assert np.all(v >= -1e-12) and v.max() < 0.5


def test_duhamel_dominated_by_wolff():
    rng = np.random.default_rng(22)
    grid = SpaceTimeGrid((0.0, 0.0), (1.0, 1.0), 8, 0.5, 8)
    mu = random_atoms(rng, 10)
    u = duhamel(mu, grid, BOX).values
    W, _ = wolff_atoms_field(mu, grid, 2 * BOX.d)
    assert np.all(u <= c20(2) * W * (1 + 1e-12))
