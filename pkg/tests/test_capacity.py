import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from gffiic.capacity import (capacity, capacity_tail_asymptotic, capacity_tail_exact, cluster_capacity,
                             equilibrium, hitting_capacity, subadditivity_check)
from gffiic.greens import free_green
from gffiic.lattice import DomainError

G00 = free_green(3, (0, 0, 0))


def test_point_and_pair():
    assert capacity([(0, 0, 0)]) == pytest.approx(1 / G00)
    g1 = free_green(3, (1, 0, 0))
    assert capacity([(0, 0, 0), (1, 0, 0)]) == pytest.approx(2 / (G00 + g1))


def test_outer_layer_reduction_matches_full_solve():
    pts = np.array([(x, y, z) for x in range(-2, 3) for y in range(-2, 3) for z in range(-2, 3)])
    full = np.linalg.solve(
        np.array([[free_green(3, tuple(p - q)) for q in pts] for p in pts]), np.ones(len(pts)))
    e = equilibrium(pts)
    assert e.total == pytest.approx(full.sum(), rel=1e-9)
    assert e.weights[(np.abs(pts) < 2).all(axis=1)].max() == 0.0


def test_large_box_approaches_continuum():
    # cap(B(n)) grows like n; c(3) ~ 0.66 for the discrete cube in these units
    c4 = capacity([(x, y, z) for x in range(-4, 5) for y in range(-4, 5) for z in range(-4, 5)])
    c8 = capacity([(x, y, z) for x in range(-8, 9) for y in range(-8, 9) for z in range(-8, 9)])
    assert 1.8 < c8 / c4 < 2.1


@given(st.lists(st.tuples(*[st.integers(-3, 3)] * 3), min_size=1, max_size=12, unique=True),
       st.lists(st.tuples(*[st.integers(-3, 3)] * 3), min_size=1, max_size=12, unique=True))
@settings(max_examples=60, deadline=None)
def test_subadditive_monotone(D1, D2):
    assert subadditivity_check(np.array(D1), np.array(D2)).ok


def test_hitting_capacity_agrees():
    pts = [(x, y, 0) for x in range(-2, 3) for y in range(-2, 3)]
    e = hitting_capacity(pts, reps=20000, seed=3)
    assert abs(e.mean - capacity(pts)) < 4 * e.sem + 0.02 * capacity(pts)
    v, s = cluster_capacity(pts)
    assert s == 0.0 and v == pytest.approx(capacity(pts))


def test_bad_sets():
    with pytest.raises(DomainError):
        capacity([(0, 0, 0), (0, 0, 0)])
    with pytest.raises(DomainError):
        capacity(np.empty((0, 3)))


@pytest.mark.parametrize("T", [0.5, 1.0, 3.0, 30.0])
def test_tail_formula_against_quadrature(T):
    dens = lambda t: 1 / (2 * math.pi * t * math.sqrt(G00 * t - 1))
    lo = max(T, 1 / G00)
    val, _ = quad(dens, lo, np.inf, limit=200)
    assert float(capacity_tail_exact(T, G00)) == pytest.approx(min(val, 0.5) if T > 1 / G00 else 0.5, rel=1e-6)


def test_total_mass_half_and_asymptotics():
    assert float(capacity_tail_exact(1 / G00 * 0.99, G00)) == 0.5
    T = 1e6
    assert float(capacity_tail_exact(T, G00)) == pytest.approx(float(capacity_tail_asymptotic(T, G00)), rel=1e-3)
