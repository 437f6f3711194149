import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from parapot.grids import CellGrid, SpaceTimeGrid
from parapot.measures import SpaceTimeMeasure, SpatialMeasure
from parapot.potentials import (PotentialParams, field, h1, h2, max1, max2, wolff, wolff_atomic,
                                wolff_atoms_field)

from conftest import random_atoms


def quad_wolff(mu, x, t, R):
    """Direct s-quadrature of the cylinder-mass integral, split at entry scales."""
    ds = np.linalg.norm(mu.points - np.asarray(x), axis=1)
    s_in = np.maximum(ds, np.sqrt(2 * np.abs(mu.times - t)))
    N = mu.N

    def mass(s):
        return float(np.sum(mu.weights[s_in <= s]))

    knots = sorted({float(v) for v in s_in if 0 < v < R} | {R})
    total, lo = 0.0, knots[0]
    for hi in knots[1:]:
        v, _ = integrate.quad(lambda s: mass(s) * s ** (-N - 1), lo, hi, epsabs=0, epsrel=1e-12)
        total += v
        lo = hi
    return total


def test_weights():
    assert h1(0.5, 1) == pytest.approx(math.log(2))
    assert h1(1.0, 2) == pytest.approx(math.sqrt(math.log(2)))
    assert h1(math.exp(-4), 2) == pytest.approx(2.0)
    assert h2(1.0, 0.5, 1.0) == pytest.approx(math.log(2) ** -0.5)
    assert h2(0.3, 0.0, 1.0) == 1.0
    assert h2(2 / math.e, 1.0, 1.0) == pytest.approx(1.0)


def test_wolff_atomic_examples():
    mu = SpaceTimeMeasure.atom([0.0, 0.0], 0.0)
    assert wolff_atomic(mu, [0.5, 0.0], 0.125, 1.0).value == pytest.approx(1.5, rel=1e-14)
    assert wolff_atomic(mu, [0.0, 0.0], 0.0, 1.0).infinite
    assert wolff_atomic(mu, [0.9, 0.0], 0.0, 0.5).value == 0.0


def test_wolff_matches_quadrature_random():
    rng = np.random.default_rng(10)
    for _ in range(20):
        mu = random_atoms(rng, int(rng.integers(1, 50)))
        x, t = rng.uniform(0, 1, 2), rng.uniform(0, 0.5)
        R = float(rng.uniform(0.3, 3.0))
        assert wolff_atomic(mu, x, t, R).value == pytest.approx(quad_wolff(mu, x, t, R), rel=1e-8)


def test_wolff_generic_equals_atomic():
    rng = np.random.default_rng(11)
    mu = random_atoms(rng, 10)
    p = PotentialParams(R=1.5)
    for _ in range(5):
        x, t = rng.uniform(0, 1, 2), rng.uniform(0, 0.5)
        assert wolff(mu, x, t, p).value == pytest.approx(wolff_atomic(mu, x, t, 1.5).value, rel=1e-12)


def test_wolff_of_unit_density():
    d = 0.25
    g = CellGrid((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), (8, 8, 8))
    mu = SpaceTimeMeasure.from_density(g, np.ones(g.shape))
    v = wolff(mu, [0.0, 0.0], 0.0, PotentialParams(R=2 * d, d=d))
    assert v.value == pytest.approx(2 * math.pi * d * d, rel=1e-10)


def test_extension_factor_bound():
    rng = np.random.default_rng(12)
    d = math.sqrt(2) + 0.5
    for _ in range(10):
        mu = random_atoms(rng, 8)
        x, t = rng.uniform(0, 1, 2), rng.uniform(0, 0.5)
        w_inf = wolff_atomic(mu, x, t, math.inf).value
        w_2d = wolff_atomic(mu, x, t, 2 * d).value
        assert w_inf < 4 / 3 * w_2d


def test_max_examples():
    p = PotentialParams(alpha=1.0, R=0.5)
    assert max1(SpatialMeasure.dirac([0.3, 0.3]), [0.3, 0.3], p).infinite
    assert max1(SpatialMeasure.zero(2), [0.3, 0.3], p).value == 0.0
    g = CellGrid((-2.0, -2.0), (2.0, 2.0), (8, 8))
    leb = SpatialMeasure.from_density(g, np.ones((8, 8)))
    assert max1(leb, [0.0, 0.0], p).value == pytest.approx(math.pi / math.log(2), rel=1e-6)
    mu = SpaceTimeMeasure.atom([0.3, 0.3], 0.2)
    assert max2(mu, [0.3, 0.3], 0.2, PotentialParams(beta=0.5, R=0.5)).infinite
    g3 = CellGrid((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0), (8, 8, 8))
    leb3 = SpaceTimeMeasure.from_density(g3, np.ones(g3.shape))
    v = max2(leb3, [0.0, 0.0], 0.0, PotentialParams(beta=0.0, R=0.4, d=1.0))
    assert v.value == pytest.approx(math.pi * 0.16, rel=1e-6)


def test_field_zero_and_consistency():
    grid = SpaceTimeGrid((0.0, 0.0), (1.0, 1.0), 8, 0.5, 8)
    z = field("wolff", SpaceTimeMeasure.zero(2), grid, PotentialParams(R=1.0))
    assert not np.any(z.values)
    rng = np.random.default_rng(13)
    mu = random_atoms(rng, 12)
    f = field("wolff", mu, grid, PotentialParams(R=1.0))
    xs, ts = grid.spatial_points(), grid.times
    vals = f.values.reshape(len(xs), len(ts))
    for i in (0, 17, 63):
        for k in (0, 3, 7):
            assert vals[i, k] == pytest.approx(wolff_atomic(mu, xs[i], ts[k], 1.0).value, rel=1e-12)


def test_workers_bitwise_identical():
    rng = np.random.default_rng(14)
    mu = random_atoms(rng, 300)
    grid = SpaceTimeGrid((0.0, 0.0), (1.0, 1.0), 12, 0.5, 10)
    a, fa = wolff_atoms_field(mu, grid, 2.0, workers=1)
    b, fb = wolff_atoms_field(mu, grid, 2.0, workers=3)
    assert a.tobytes() == b.tobytes() and fa.tobytes() == fb.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 2.0), st.floats(0.01, 2.0))
def test_truncation_monotone(seed, R1, dR):
    rng = np.random.default_rng(seed)
    mu = random_atoms(rng, 5)
    x, t = rng.uniform(0, 1, 2), rng.uniform(0, 0.5)
    assert wolff_atomic(mu, x, t, R1).value <= wolff_atomic(mu, x, t, R1 + dR).value
    om = SpatialMeasure(2, mu.points + 0.01, mu.weights)
    p1, p2 = PotentialParams(R=R1), PotentialParams(R=R1 + dR)
    assert float(max1(om, x, p1)) <= float(max1(om, x, p2)) + 1e-12


def test_negative_measure_rejected():
    mu = SpaceTimeMeasure(2, [[0.5, 0.5]], [0.1], [-1.0])
    with pytest.raises(ValueError):
        wolff(mu, [0.5, 0.5], 0.2, PotentialParams())
