"""Equilibrium measures and capacities of finite vertex sets of Z^d.

For a finite set D, a walk started at w in D hits D at time 0, so the
last-exit decomposition ``P_w(tau_D < inf) = sum_v G(w, v) e_D(v)`` reads
``G|_{DxD} e_D = 1``; the capacity is ``sum_v e_D(v)``.  Sets whose outer
layer exceeds ``DENSE_SOLVE_LIMIT`` vertices fall back to a hitting-probability Monte Carlo
estimate from a sphere around the set.
"""

from dataclasses import dataclass
import math

import numpy as np
from numba import njit
import scipy.linalg

from .greens import free_green, free_table
from .lattice import DomainError, euclidean_sphere
from .stats import Estimate

DENSE_SOLVE_LIMIT = 3000
NEG_TOL = 1e-8


@dataclass(frozen=True)
class EquilibriumMeasure:
    points: np.ndarray  # (n, d)
    weights: np.ndarray
    total: float
    clipped: float = 0.0  # total negative mass removed (solver noise)


def _table_for(d, span, green=None):
    if green is not None and green.radius >= span:
        return green
    q = 16 if d <= 4 else 4  # rounding keeps the table cache small; high d tables grow like R^d
    R = max(q, int(math.ceil(span / q)) * q)
    return free_table(d, R)


def green_matrix(points, green=None):
    pts = np.asarray(points, dtype=np.int64)
    d = pts.shape[1]
    span = int((pts.max(axis=0) - pts.min(axis=0)).max()) if len(pts) else 0
    tab = _table_for(d, span, green)
    disp = np.abs(pts[:, None, :] - pts[None, :, :])
    return tab.values[tuple(np.moveaxis(disp, -1, 0))]


def _as_points(vertex_set, d=None):
    pts = np.asarray(sorted(vertex_set) if isinstance(vertex_set, (set, frozenset)) else vertex_set,
                     dtype=np.int64)
    if pts.ndim != 2 or len(pts) == 0:
        raise DomainError("vertex set must be a nonempty (n, d) collection")
    if d is not None and pts.shape[1] != d:
        raise DomainError("dimension mismatch")
    if len(np.unique(pts, axis=0)) != len(pts):
        raise DomainError("duplicate points make the Green matrix singular")
    return pts


def outer_layer(pts):
    """Mask of points of D having a lattice neighbour outside D."""
    lo = pts.min(axis=0) - 1
    occ = np.zeros(tuple(pts.max(axis=0) - lo + 2), dtype=bool)
    local = pts - lo
    occ[tuple(local.T)] = True
    out = np.zeros(len(pts), dtype=bool)
    for j in range(pts.shape[1]):
        for s in (-1, 1):
            nb = local.copy()
            nb[:, j] += s
            out |= ~occ[tuple(nb.T)]
    return out


def equilibrium(vertex_set, green=None):
    """Solve G|_{DxD} q = 1; returns the equilibrium measure of D.

    A walk from outside D enters D through its outer layer, so the measure
    is supported there and only that layer enters the solve."""
    pts = _as_points(vertex_set)
    layer = outer_layer(pts)
    sub = pts[layer]
    if len(sub) > 4 * DENSE_SOLVE_LIMIT:
        raise DomainError(f"{len(sub)} boundary points is beyond the dense solver limit")
    Gm = green_matrix(sub, green)
    try:
        c = scipy.linalg.cho_factor(Gm, lower=True, check_finite=False)
        q = scipy.linalg.cho_solve(c, np.ones(len(sub)), check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise DomainError("Green matrix is not positive definite") from exc
    neg = q < 0
    clipped = float(-q[neg].sum())
    if clipped > NEG_TOL * max(1.0, q.sum()):
        raise DomainError(f"equilibrium weights negative beyond tolerance ({clipped:g})")
    w = np.zeros(len(pts))
    w[layer] = np.where(neg, 0.0, q)
    return EquilibriumMeasure(pts, w, float(w.sum()), clipped)


def capacity(vertex_set, green=None):
    return equilibrium(vertex_set, green).total


@njit(cache=True)
def _hit_walks(starts, occ, shape, lo, kill2, center, seed):
    np.random.seed(seed)
    n, d = starts.shape
    hit = np.zeros(n, dtype=np.bool_)
    pos = np.empty(d, dtype=np.int64)
    for i in range(n):
        for j in range(d):
            pos[j] = starts[i, j]
        while True:
            inbox = True
            for j in range(d):
                c = pos[j] - lo[j]
                if c < 0 or c >= shape[j]:
                    inbox = False
                    break
            if inbox:
                # row-major flat index into occ
                flat = 0
                for j in range(d):
                    flat = flat * shape[j] + (pos[j] - lo[j])
                if occ[flat]:
                    hit[i] = True
                    break
            r2 = 0.0
            for j in range(d):
                dx = pos[j] - center[j]
                r2 += dx * dx
            if r2 > kill2:
                break
            k = np.random.randint(0, 2 * d)
            pos[k // 2] += 1 if k % 2 else -1
    return hit


def hitting_capacity(vertex_set, reps=20000, seed=0, green=None, start_factor=2.0, kill_factor=8.0):
    """Capacity from the probability that SRW started on a far sphere hits D.

    Walks start uniformly on the discrete sphere of radius r0 around the
    set's centre and die beyond radius kill_factor*r0.  With Gbar the mean of
    G(w - v) over start points w and set points v, the last-exit formula
    gives P(hit) ~ cap * Gbar; walks killed at radius R would still hit with
    probability ~ cap * G(R), which is added back analytically:
    cap = p_hit / (Gbar - p_killed * G(R)).  Returns an Estimate."""
    pts = _as_points(vertex_set)
    d = pts.shape[1]
    center = np.round(pts.mean(axis=0)).astype(np.int64)
    rad = float(np.sqrt(((pts - center) ** 2).sum(axis=1)).max())
    r0 = max(2.0, start_factor * rad)
    sphere = euclidean_sphere(r0, d) + center
    rng = np.random.default_rng(seed)
    starts = sphere[rng.integers(0, len(sphere), size=reps)]
    lo = pts.min(axis=0)
    occ = np.zeros(tuple(pts.max(axis=0) - lo + 1), dtype=np.bool_)
    occ[tuple((pts - lo).T)] = True
    Rk = kill_factor * r0
    hit = _hit_walks(starts, occ.ravel(), np.array(occ.shape, dtype=np.int64), lo, Rk * Rk, center.astype(np.float64), int(seed) % (2**32))
    sub = pts[rng.integers(0, len(pts), size=min(len(pts), 256))]
    span = int(np.abs(sphere[:, None, :] - sub[None, :, :]).max())
    tab = _table_for(d, span, green)
    gbar = float(tab.lookup(sphere[:, None, :] - sub[None, :, :]).mean())
    g_kill = free_green(d, (int(round(Rk)),) + (0,) * (d - 1))
    p = hit.mean()
    sem_p = hit.std(ddof=1) / math.sqrt(reps)
    den = gbar - (1 - p) * g_kill
    cap = p / den
    return Estimate(float(cap), float(sem_p / den), reps, int(hit.sum()), None,
                    f"sphere r0={r0:.1f}, kill radius {Rk:.1f}")


def cluster_capacity(points, green=None, reps=20000, seed=0):
    """Capacity of a cluster's lattice vertex set (dense solve, or Monte Carlo above the limit).

    Returns (value, standard error); the error is 0 for the dense solve."""
    pts = _as_points(points)
    if np.count_nonzero(outer_layer(pts)) <= DENSE_SOLVE_LIMIT:
        return equilibrium(pts, green).total, 0.0
    e = hitting_capacity(pts, reps=reps, seed=seed, green=green)
    return e.mean, e.sem


@dataclass(frozen=True)
class SubadditivityReport:
    cap1: float
    cap2: float
    cap_union: float
    subadditive: bool
    monotone: bool

    @property
    def ok(self):
        return self.subadditive and self.monotone


def subadditivity_check(D1, D2, green=None, tol=1e-9):
    """cap(D1 u D2) <= cap(D1) + cap(D2) and cap(Di) <= cap(D1 u D2)."""
    s1 = {tuple(p) for p in np.asarray(D1).tolist()}
    s2 = {tuple(p) for p in np.asarray(D2).tolist()}
    c1 = capacity(sorted(s1), green)
    c2 = capacity(sorted(s2), green)
    cu = capacity(sorted(s1 | s2), green)
    scale = tol * max(1.0, cu)
    return SubadditivityReport(c1, c2, cu, cu <= c1 + c2 + scale,
                               c1 <= cu + scale and c2 <= cu + scale)


def capacity_tail_exact(T, g00):
    """P(cap(C(0)) >= T) from the density (2 pi t sqrt(G00 t - 1))^-1 on t > 1/G00."""
    T = np.asarray(T, dtype=np.float64)
    arg = g00 * T - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.arctan(1.0 / np.sqrt(arg)) / math.pi
    return np.where(arg > 0, out, 0.5)


def capacity_tail_asymptotic(T, g00):
    return 1.0 / (math.pi * math.sqrt(g00)) / np.sqrt(np.asarray(T, dtype=np.float64))
