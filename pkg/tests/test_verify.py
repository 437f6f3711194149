import math

import numpy as np
import pytest

from parapot.grids import CellGrid
from parapot.measures import Domain, SpaceTimeMeasure, SpatialMeasure
from parapot.nonlinearity import ExpNonlinearity
from parapot.solver import ProblemSpec
from parapot.verify import (FAIL, INAPPLICABLE, PASS, check_double_average, check_exp_stability, check_hexp,
                            check_initial_exp_bound, check_levelset_decay, check_wolff_domination,
                            restrict_to_cylinder, scale_to_threshold)

from conftest import peaked_density, random_atoms

BOX = Domain.unit_box(2, 0.5)


def smooth_spatial(n=32):
    g = CellGrid((0.0, 0.0), (1.0, 1.0), (n, n))
    X, Y = np.meshgrid(g.centers(0), g.centers(1), indexing="ij")
    return SpatialMeasure.from_density(g, np.sin(np.pi * X) * np.sin(np.pi * Y))


def test_report_shape():
    rep = check_wolff_domination(SpaceTimeMeasure.zero(2), BOX, n=4)
    assert rep["check"] == "wolffdom" and rep["status"] == PASS and "depends_on" in rep


def test_wolff_domination_random_atoms():
    rep = check_wolff_domination(random_atoms(np.random.default_rng(0), 8), BOX, n=12)
    assert rep["status"] == PASS and rep["violations"] == 0 and rep["max_ratio"] <= 1


def test_levelset_both_betas():
    mu = peaked_density(np.random.default_rng(1))
    for beta in (0.0, 0.5):
        rep = check_levelset_decay(mu, beta, n=20)
        assert rep["status"] == PASS, rep.get("reason")
        assert len(rep["eps"]) == 4


def test_levelset_zero_measure():
    assert check_levelset_decay(SpaceTimeMeasure.zero(2), 0.0)["status"] == PASS


def test_restrict_keeps_only_inside_mass():
    mu = SpaceTimeMeasure(2, [[0.5, 0.5], [0.9, 0.9]], [0.2, 0.2], [1.0, 2.0])
    sub = restrict_to_cylinder(mu, [0.5, 0.5], 0.2, 0.1)
    assert sub.total == pytest.approx(1.0)


def test_double_average_density():
    mu = peaked_density(np.random.default_rng(2))
    rep = check_double_average(mu, 0.0, 0.1, ([0.5, 0.5], 0.15), d=1.0, n=12)
    assert rep["status"] == PASS


def test_double_average_atoms_inapplicable():
    mu = SpaceTimeMeasure.atom([0.5, 0.5], 0.15)
    rep = check_double_average(mu, 0.0, 0.1, ([0.5, 0.5], 0.15))
    assert rep["status"] == INAPPLICABLE


def test_hexp_refinement_stable():
    mu = peaked_density(np.random.default_rng(3), n=12, nt=6)
    rep = check_hexp(mu, 0.5, 0.2, radii=[0.1], centers=[(np.array([0.5, 0.5]), 0.15)], d=1.0, n=8)
    assert rep["status"] == PASS


def test_initexp_admissible_and_stress():
    om = smooth_spatial()
    for alpha in (1.0, 2.0):
        scaled = scale_to_threshold(om, alpha, 1.0, BOX)
        rep = check_initial_exp_bound(scaled, alpha, 1.0, [0.01, 0.1], BOX, n=16)
        assert rep["status"] == PASS and rep["admissible"]
        big = check_initial_exp_bound(scaled.scaled(4.0), alpha, 1.0, [0.01, 0.1], BOX, n=16)
        assert big["status"] == INAPPLICABLE and not big["admissible"]


def test_initexp_atom_is_inapplicable():
    rep = check_initial_exp_bound(SpatialMeasure.dirac([0.5, 0.5]), 1.0, 1.0, [0.1], BOX, n=8)
    assert rep["status"] == INAPPLICABLE


def test_exp_stability():
    spec = ProblemSpec(BOX, "linear", ExpNonlinearity(1.0, 1.0, 1), omega=smooth_spatial(16), nx=16, nt=16)
    rep = check_exp_stability(spec, 1.0)
    assert rep["status"] == PASS and abs(rep["ratios"][0] - 1) < 0.05
