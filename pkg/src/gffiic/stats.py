"""Monte Carlo summaries and weighted log-log fits."""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class Estimate:
    mean: float
    sem: float
    n: int
    successes: int = None  # raw count for proportions
    upper95: float = None  # one-sided bound reported when successes == 0
    note: str = ""

    @property
    def rel_err(self):
        return self.sem / self.mean if self.mean > 0 else math.inf

    def wilson(self, z=1.96):
        if self.successes is None:
            raise ValueError("Wilson interval needs a proportion estimate")
        return wilson_interval(self.successes, self.n, z)

    def z_against(self, value, value_sem=0.0):
        s = math.hypot(self.sem, value_sem)
        return (self.mean - value) / s if s > 0 else (0.0 if self.mean == value else math.inf)


def wilson_interval(k, n, z=1.96):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, c - h), min(1.0, c + h)


def proportion(k, n, note=""):
    """Binomial proportion; a zero count reports the 95% one-sided bound 1-0.05^(1/n)."""
    k, n = int(k), int(n)
    if n <= 0:
        raise ValueError("no replicates")
    p = k / n
    sem = math.sqrt(p * (1 - p) / n)
    if k == 0:
        return Estimate(0.0, 0.0, n, 0, 1.0 - 0.05 ** (1.0 / n), note or "zero successes")
    return Estimate(p, sem, n, k, None, note)


def mean_estimate(x, note=""):
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("need at least two samples")
    return Estimate(math.fsum(x) / n, float(np.std(x, ddof=1)) / math.sqrt(n), n, None, None, note)


class RunningStats:
    """Welford mean/variance with compensated merging (order-independent up to rounding)."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def extend(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.size == 0:
            return
        other = RunningStats()
        other.n = xs.size
        other.mean = math.fsum(xs) / xs.size
        other.m2 = math.fsum((xs - other.mean) ** 2)
        self.merge(other)

    def merge(self, other):
        if other.n == 0:
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        self.mean += d * other.n / n
        self.m2 += other.m2 + d * d * self.n * other.n / n
        self.n = n
        return self

    @property
    def var(self):
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    def estimate(self):
        return Estimate(self.mean, math.sqrt(self.var / self.n), self.n)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float  # nan when undefined (no spread in y)
    points: tuple = field(default=())  # (log x, log y, weight) triples
    dropped: int = 0

    def predict(self, x):
        return math.exp(self.intercept) * x**self.slope


def fit_loglog(points):
    """Weighted least squares of log y on log x, weights 1/(sem/y)^2.

    ``points`` is a sequence of (x, y, sem) or (x, Estimate).  Points with
    y <= 0 are dropped with a warning; a zero sem gets unit weight.  The slope
    error is the usual WLS error scaled by the reduced chi-square when it
    exceeds one (under-dispersed data is not rewarded)."""
    rows = []
    dropped = 0
    for p in points:
        if len(p) == 2:
            x, e = p
            y, s = e.mean, e.sem
        else:
            x, y, s = p
        if not y > 0 or not x > 0:
            dropped += 1
            continue
        rows.append((float(x), float(y), float(s)))
    if dropped:
        warnings.warn(f"fit_loglog: dropped {dropped} nonpositive point(s)")
    if len(rows) < 3:
        raise ValueError("fit_loglog needs at least 3 positive points")
    lx = np.log([r[0] for r in rows])
    ly = np.log([r[1] for r in rows])
    rel = np.array([r[2] / r[1] for r in rows])
    if np.all(rel == 0):
        w = np.ones_like(lx)
    else:
        floor = rel[rel > 0].min() if np.any(rel > 0) else 1.0
        w = 1.0 / np.maximum(rel, floor) ** 2
    W = w.sum()
    xb = (w * lx).sum() / W
    yb = (w * ly).sum() / W
    sxx = (w * (lx - xb) ** 2).sum()
    slope = (w * (lx - xb) * (ly - yb)).sum() / sxx
    icpt = yb - slope * xb
    resid = ly - icpt - slope * lx
    dof = len(rows) - 2
    chi2 = (w * resid**2).sum()
    se = math.sqrt(1.0 / sxx)
    if np.all(rel == 0):
        se = math.sqrt(chi2 / dof / sxx) if dof > 0 else math.nan
    elif dof > 0:
        se *= math.sqrt(max(1.0, chi2 / dof))
    syy = (w * (ly - yb) ** 2).sum()
    r2 = 1.0 - (w * resid**2).sum() / syy if syy > 1e-300 else math.nan
    pts = tuple(zip(lx.tolist(), ly.tolist(), w.tolist()))
    return SlopeFit(float(slope), float(icpt), float(se), float(r2), pts, dropped)


def two_sample_z(e1, e2):
    s = math.hypot(e1.sem, e2.sem)
    if s == 0:
        return 0.0 if e1.mean == e2.mean else math.inf
    return (e1.mean - e2.mean) / s


def ks_pvalue(a, b):
    return float(_st.ks_2samp(a, b).pvalue)
