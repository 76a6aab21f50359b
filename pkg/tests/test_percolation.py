import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from gffiic.gff import sample_spectral
from gffiic.lattice import Annulus, BoxGeom, DomainError
from gffiic.metric import open_level_set
from gffiic.percolation import (Explorer, cluster_stats, crossing, label_clusters, label_field, one_arm,
                                two_point, volume_in)


def _oracle_partition(graph):
    b = graph.box
    lo, hi = graph.edge_list()
    A = coo_matrix((np.ones(len(lo)), (lo, hi)), shape=(b.volume, b.volume))
    _, lab = connected_components(A, directed=False)
    lab = np.where(graph.active, lab, -1)
    return lab


def _same_partition(a, b):
    assert np.array_equal(a < 0, b < 0)
    m = a >= 0
    pairs = set(zip(a[m].tolist(), b[m].tolist()))
    assert len(pairs) == len(set(a[m].tolist())) == len(set(b[m].tolist()))


@given(st.integers(0, 10**6), st.floats(-0.5, 0.5))
@settings(max_examples=25, deadline=None)
def test_union_find_matches_csgraph(seed, h):
    f = sample_spectral(BoxGeom(3, 4), seed)
    g = open_level_set(f, h)
    lab = label_clusters(g)
    _same_partition(lab.root, _oracle_partition(g))
    _same_partition(label_field(f, h).root, lab.root)


def test_explorer_matches_labelling():
    box = BoxGeom(3, 6)
    ex = Explorer(box)
    for s in range(10):
        f = sample_spectral(box, 11, s)
        lab = label_field(f, 0.0)
        c = ex.cluster(f.values, box.center, seed=11, stream=s)
        r = lab.root[box.center]
        expected = lab.members(r) if r >= 0 else np.empty(0, int)
        assert np.array_equal(np.sort(c), expected)
        assert one_arm(lab) == (len(c) > 0 and cluster_stats(box, c)[0] == box.radius)


def test_explorer_limit_restricts():
    box = BoxGeom(3, 6)
    f = sample_spectral(box, 2, 0)
    shifted = np.abs(f.values) + 10.0  # everything open
    c = Explorer(box).cluster(shifted, box.center, limit=2)
    assert len(c) == 5**3


def test_sign_mode_uses_both_signs():
    box = BoxGeom(3, 3)
    f = sample_spectral(box, 3)
    lab = label_field(f, sign=True)
    assert np.all(lab.root >= 0)
    # clusters of the sign graph never mix signs
    for cid in lab.sizes:
        s = np.sign(f.values[lab.members(cid)])
        assert np.all(s == s[0])


def test_events_monotone_and_consistent():
    box = BoxGeom(3, 8)
    for s in range(8):
        lab = label_field(sample_spectral(box, 5, s))
        if one_arm(lab):
            assert crossing(lab, Annulus(1, 8))
            assert one_arm(lab, 4)
            assert volume_in(lab, lab.root[box.center], 8) >= 9
        assert two_point(lab, (0, 0, 0), (0, 0, 0)) == (lab.root[box.center] >= 0)


def test_domain_errors():
    lab = label_field(sample_spectral(BoxGeom(3, 2), 0))
    with pytest.raises(DomainError):
        one_arm(lab, 3)
    with pytest.raises(DomainError):
        crossing(lab, Annulus(1, 3))
    with pytest.raises(DomainError):
        volume_in(lab, 0, 5)
