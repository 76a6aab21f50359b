import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gffiic.stats import (RunningStats, fit_loglog, ks_pvalue, mean_estimate, proportion, two_sample_z,
                          wilson_interval)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200), st.integers(0, 199))
@settings(max_examples=100, deadline=None)
def test_welford_matches_two_pass(xs, cut):
    cut = min(cut, len(xs))
    a, b = RunningStats(), RunningStats()
    for x in xs[:cut]:
        a.push(x)
    b.extend(xs[cut:])
    a.merge(b)
    arr = np.array(xs)
    assert a.mean == pytest.approx(arr.mean(), rel=1e-9, abs=1e-6)
    assert a.var == pytest.approx(arr.var(ddof=1), rel=1e-7, abs=1e-3)


def test_proportion_zero_successes():
    e = proportion(0, 1000)
    assert e.mean == 0 and e.upper95 == pytest.approx(1 - 0.05**0.001)
    lo, hi = wilson_interval(30, 100)
    assert lo < 0.3 < hi
    with pytest.raises(ValueError):
        proportion(0, 0)


def test_fit_exact_power_law():
    pts = [(x, 3 * x**-1.7, 0.01 * 3 * x**-1.7) for x in (2, 4, 8, 16)]
    f = fit_loglog(pts)
    assert f.slope == pytest.approx(-1.7, abs=1e-12)
    assert f.predict(5) == pytest.approx(3 * 5**-1.7)


def test_fit_coverage():
    # y = x^-0.5 (1 + eps): the two-stderr interval covers the true slope in >= 95% of trials
    rng = np.random.default_rng(0)
    xs = np.array([8, 16, 32, 64])
    hits = 0
    trials = 1000
    rel = 0.05
    for _ in range(trials):
        y = xs**-0.5 * (1 + rng.normal(0, rel, len(xs)))
        f = fit_loglog([(x, v, rel * x**-0.5) for x, v in zip(xs, y)])
        hits += abs(f.slope + 0.5) <= 2 * f.slope_stderr
    assert hits / trials >= 0.95


def test_welford_million_values():
    x = np.random.default_rng(3).normal(1e3, 2.0, 10**6)
    rs = RunningStats()
    for chunk in np.array_split(x, 37):
        rs.extend(chunk)
    assert abs(rs.mean - x.mean()) <= 1e-12 * abs(x.mean())
    assert abs(rs.var - x.var(ddof=1)) <= 1e-12 * x.var()


def test_fit_drops_nonpositive():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        f = fit_loglog([(1, 1, 0.1), (2, 0, 0.0), (4, 0.5, 0.05), (8, 0.35, 0.03)])
    assert f.dropped == 1 and w
    with pytest.raises(ValueError):
        fit_loglog([(1, 1, 0.1), (2, 0.5, 0.1)])


def test_z_helpers():
    a = mean_estimate([1.0, 2.0, 3.0])
    assert a.mean == 2.0
    assert two_sample_z(a, a) == 0.0
    assert a.z_against(2.0) == 0.0
    r = np.random.default_rng(1)
    assert ks_pvalue(r.normal(size=500), r.normal(size=500)) > 1e-3
