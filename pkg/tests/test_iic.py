
import numpy as np
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from gffiic.capacity import capacity
from gffiic.greens import free_green
from gffiic.iic import (Boundary, Capacity, ConditionedSampler, CylinderEvent, Point, Supercritical,
                        acceptance_rate, calibrate_capacity, count_outer_components, cylinder_table,
                        default_battery, equivalence_report, sample_conditioned, symmetry_orbit,
                        unique_crossing_diagnostic)
from gffiic.capacity import capacity_tail_asymptotic
from gffiic.lattice import BoxGeom, DomainError
from gffiic.metric import open_level_set


def test_orbits():
    assert len(symmetry_orbit((2, 0, 0))) == 6
    assert len(symmetry_orbit((1, 1, 0))) == 12
    assert len(symmetry_orbit((1, 2, 3))) == 48


def test_conditioning_validation():
    with pytest.raises(DomainError):
        Supercritical(0.0, 4)
    with pytest.raises(DomainError):
        ConditionedSampler(Point((0, 0, 0)))
    with pytest.raises(DomainError):
        ConditionedSampler(Boundary(5), box=BoxGeom(3, 4))
    with pytest.raises(DomainError):
        CylinderEvent(((0, 0, 0),), ())


def test_boundary_samples_satisfy_event():
    s = ConditionedSampler(Boundary(4), seed=3)
    for _ in range(5):
        smp = s.draw()
        lab = smp.labeling()
        r = lab.root[s.box.center]
        assert r >= 0 and np.array_equal(np.sort(smp.members), lab.members(r))
        assert s.box.sup_norm[smp.members].max() == 4
    assert 0 < s.acceptance.mean <= 1


def test_point_samples_contain_target():
    cond = Point((3, 0, 0), symmetric=True)
    s = ConditionedSampler(cond, seed=1)
    targets = {s.box.index(t) for t in symmetry_orbit((3, 0, 0))}
    for _ in range(4):
        smp = s.draw()
        assert targets & set(smp.members.tolist())


def test_capacity_samples_exceed_threshold():
    g00 = free_green(3, (0, 0, 0))
    T = 3.0 / g00
    smp = sample_conditioned(Capacity(T, 6), seed=2)
    pts = smp.field.box.coords[smp.members]
    assert capacity(pts) >= T * (1 - 1e-12)
    assert smp.capacity >= T * (1 - 1e-12)


def test_supercritical_accepts_more():
    a = acceptance_rate(Boundary(4), 300, seed=0).mean
    b = acceptance_rate(Supercritical(0.5, 4), 300, seed=0).mean
    assert b > a


def test_cylinder_table_deterministic_and_margin():
    ev = default_battery(3)
    t1 = cylinder_table(Boundary(8), ev, 20, seed=5)
    t2 = cylinder_table(Boundary(8), ev, 20, seed=5)
    assert [e.successes for _, e in t1.rows] == [e.successes for _, e in t2.rows]
    with pytest.raises(DomainError):
        cylinder_table(Boundary(2), ev, 5)
    assert t1.rows[0][1].mean <= 1


def test_equivalence_report_shape():
    rep = equivalence_report(default_battery(3)[:2], [(Boundary(8), Point((4, 0, 0), symmetric=True))], 10,
                             seed=1)
    assert len(rep.labels) == 2 and len(next(iter(rep.z.values()))) == 2
    assert rep.max_abs_z >= 0


def test_calibration_inverts_asymptotic_law():
    g00 = free_green(3, (0, 0, 0))
    T = calibrate_capacity(0.05, g00)
    assert float(capacity_tail_asymptotic(T, g00)) == pytest.approx(0.05)


def _outer_oracle(box, field, members, n, N):
    g = open_level_set(field, 0.0)
    lo, hi = g.edge_list()
    far = np.zeros(box.volume, dtype=bool)
    far[members] = box.sup_norm[members] > n
    keep = far[lo] & far[hi]
    A = coo_matrix((np.ones(keep.sum()), (lo[keep], hi[keep])), shape=(box.volume, box.volume))
    _, lab = connected_components(A, directed=False)
    return len({lab[v] for v in np.flatnonzero(far) if box.sup_norm[v] == N})


def test_outer_components_against_csgraph():
    s = ConditionedSampler(Boundary(8), seed=4)
    for _ in range(6):
        smp = s.draw()
        got = count_outer_components(s.box, smp.field.values, smp.key, smp.members, 2, 8)
        assert got == _outer_oracle(s.box, smp.field, smp.members, 2, 8) >= 1


def test_unique_crossing_runs():
    e = unique_crossing_diagnostic(6, 2, 5, seed=0)
    assert e.n == 5 and 0 <= e.mean <= 1
    with pytest.raises(DomainError):
        unique_crossing_diagnostic(2, 2, 1)
