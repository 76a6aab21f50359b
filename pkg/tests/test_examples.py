"""Small worked examples with exact or cheaply derived answers, one group per module."""
import math

import numpy as np
import pytest
from scipy import stats

from gffiic.capacity import capacity
from gffiic.estimators import estimate_one_arm
from gffiic.gff import dense_batch, sample_spectral, spectral_batch
from gffiic.greens import arcsin_two_point, dirichlet_green, free_green, killed_transition
from gffiic.harmonic import explore_cluster, harmonic_average, lemma21_band
from gffiic.iic import (Boundary, Capacity, CylinderEvent, acceptance_rate, cylinder_table, equivalence_report)
from gffiic.lattice import BoxGeom, euclidean_ball, inner_boundary, neighbors
from gffiic.loopsoup import LoopSoupSample, RootedLoop, loop_clusters, occupation_field, sample_loop_soup
from gffiic.metric import LevelSetGraph, bridge_open_prob, edge_arrays, open_level_set
from gffiic.percolation import label_clusters, one_arm, volume_in
from gffiic.stats import fit_loglog

G00 = free_green(3, (0, 0, 0))


# lattice

def test_face_and_corner_neighbours():
    assert len(neighbors((4, 0, 0), BoxGeom(3, 4))) == 5
    assert len(neighbors((1, 1, 1), BoxGeom(3, 1))) == 3


def test_small_boundaries_and_balls():
    b1 = BoxGeom(3, 1)
    assert inner_boundary(b1) == {tuple(p) for p in b1.coords.tolist()} - {(0, 0, 0)}
    assert len(inner_boundary(BoxGeom(4, 1))) == 80
    assert [len(euclidean_ball(m, 3)) for m in (0.5, 1, math.sqrt(2))] == [1, 7, 19]


# greens

def test_one_vertex_domain():
    assert dirichlet_green(BoxGeom(3, 0)).matrix[0, 0] == pytest.approx(1.0)


def test_defining_identity_and_series():
    box = BoxGeom(3, 2)
    P = killed_transition(box).toarray()
    G = dirichlet_green(box).matrix
    assert np.abs((np.eye(box.volume) - P) @ G - np.eye(box.volume)).max() < 1e-10
    # truncated Neumann series on B(1), geometric tail below 1e-10
    b1 = BoxGeom(3, 1)
    P1 = killed_transition(b1).toarray()
    rho = np.abs(np.linalg.eigvalsh(P1)).max()
    K = int(math.ceil(math.log(1e-10 * (1 - rho)) / math.log(rho)))
    S, Pk = np.zeros_like(P1), np.eye(b1.volume)
    for _ in range(K + 1):
        S += Pk
        Pk = Pk @ P1
    assert dirichlet_green(b1).matrix[b1.center, b1.center] == pytest.approx(S[b1.center, b1.center], abs=1e-9)


def test_green_symmetry_and_arcsin_sixth():
    assert free_green(3, (1, 0, 0)) == pytest.approx(free_green(3, (0, 1, 0)), rel=1e-12)
    assert arcsin_two_point(1.0, 4.0, 1.0) == pytest.approx(1 / 6)
    assert arcsin_two_point(0.0, 1.0, 1.0) == 0.0


# gff

def test_spectral_and_dense_marginals_ks():
    box = BoxGeom(3, 2)
    a = spectral_batch(box, 1, range(10000))[:, box.center]
    b = dense_batch(box, 2, range(10000))[:, box.center]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


# metric

def test_huge_constant_field_and_high_level():
    assert bridge_open_prob(10.0, 10.0, 0.0, 3) > 1 - math.exp(-33)
    f = sample_spectral(BoxGeom(3, 3), 5)
    g = open_level_set(f, float(f.values.max()) + 1e-9)
    assert not g.active.any() and not g.open.any()


# percolation

def _graph(box, active, open_all):
    is_open = np.zeros(box.volume * box.dim, dtype=bool)
    if open_all:
        is_open[edge_arrays(box)[2]] = True
    return LevelSetGraph(box, 0.0, active, is_open, 0, 0)


def test_trivial_labellings():
    box = BoxGeom(3, 2)
    lab = label_clusters(_graph(box, np.ones(box.volume, bool), False))
    assert len(set(lab.root.tolist())) == box.volume
    assert volume_in(lab, lab.root[box.center], 0) == 1
    full = label_clusters(_graph(box, np.ones(box.volume, bool), True))
    assert len(set(full.root.tolist())) == 1 and full.sizes[full.root[0]] == 125
    assert volume_in(full, full.root[box.center], 1) == 27
    assert one_arm(full)
    off = np.ones(box.volume, bool)
    off[box.center] = False
    assert not one_arm(label_clusters(_graph(box, off, True)))


# capacity

def test_far_pair_nearly_additive():
    assert capacity([(0, 0, 0), (32, 0, 0)]) == pytest.approx(2 / G00, rel=0.05)


@pytest.mark.slow
def test_box_capacity_linear_band():
    ratios = []
    for N in (4, 8, 16):
        r = np.arange(-N, N + 1)
        pts = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)
        ratios.append(capacity(pts) / N)
    assert max(ratios) / min(ratios) < 1.5


# harmonic

def test_zero_harmonic_average_gives_undefined_ratio():
    box = BoxGeom(3, 24)
    for s in range(200):
        c = explore_cluster(sample_spectral(box, 6, s), 2)
        if len(c) and not c.touches_boundary:
            h = harmonic_average(c, walk_reps=100, seed=0)
            assert h.value == 0.0
            rep = lemma21_band(c, [(13, 0, 0)], reps=20, seed=1, harmonic=h)[0]
            assert 0 <= rep.probability <= 1 and math.isnan(rep.ratio)
            return
    pytest.skip("no interior cluster found")


# loopsoup

def test_single_vertex_domain_has_no_loops():
    assert sample_loop_soup(BoxGeom(3, 0), 5.0, 40).loops == ()


def _soup(box, paths):
    loops = tuple(RootedLoop(p[0], np.array(p)) for p in paths)
    return LoopSoupSample(0.5, box, loops, 40, 0, 0)


def test_occupation_and_cluster_conventions():
    box = BoxGeom(3, 2)
    c = box.center
    e1 = c + int(box.strides[0])
    e2 = c + int(box.strides[1])
    far = box.index((2, 2, 2))
    far_n = box.index((1, 2, 2))
    occ = occupation_field(_soup(box, [[c, e1, c]])).visits
    assert occ[c] == 1 and occ[e1] == 1 and occ.sum() == 2
    assert occupation_field(_soup(box, [])).visits.sum() == 0
    two = loop_clusters(_soup(box, [[c, e1, c], [far, far_n, far]]))
    assert len({two.root[c], two.root[far]}) == 2
    one = loop_clusters(_soup(box, [[c, e1, c], [e2, c, e2]]))
    assert one.root[e1] == one.root[e2]


# estimators

def test_one_arm_unit_box_positive():
    e = estimate_one_arm(3, 0.0, [1], 2000, seed=4)[0][1]
    assert e.mean > 0


# stats

def test_constant_input_fit():
    fit = fit_loglog([(1, 2.0, 0.0), (2, 2.0, 0.0), (4, 2.0, 0.0)])
    assert fit.slope == 0.0 and math.isnan(fit.r_squared)


# iic

def test_boundary_one_matches_one_arm():
    acc = acceptance_rate(Boundary(1), 4000, seed=1)
    arm = estimate_one_arm(3, 0.0, [1], 4000, seed=2)[0][1]
    assert abs(acc.mean - arm.mean) < 3 * math.hypot(acc.sem, arm.sem)


def test_minimal_capacity_accepts_half():
    acc = acceptance_rate(Capacity(1 / G00 * (1 - 1e-9), 4), 4000, seed=3)
    assert abs(acc.mean - 0.5) < 3 * acc.sem


def test_cylinder_examples():
    o, e1 = (0, 0, 0), (1, 0, 0)
    tab = cylinder_table(Boundary(8), [CylinderEvent((o,), (0.0,)), CylinderEvent((e1,), (0.0,))], 300, seed=2)
    assert tab.rows[0][1].mean == 1.0
    p = tab.rows[1][1]
    assert p.mean - 3 * p.sem > 0.5
    assert cylinder_table(Boundary(8), [], 10).rows == []


def test_identical_conditionings_agree():
    rep = equivalence_report([CylinderEvent(((1, 0, 0),), (0.0,))], [(Boundary(6), Boundary(6))], 200, seed=4)
    assert rep.max_abs_z < 3
