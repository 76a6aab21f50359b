"""Harmonic averages of field values over an explored cluster.

The cluster ``C`` of the origin is explored with edges restricted to B(n).
A walk started on the Euclidean sphere of radius ``d*n`` runs until it first
steps onto a vertex ``w`` of ``C``.  The value it collects is ``phi_w`` when the
entering edge leaves B(n) (an edge the exploration never inspected) and 0 when
the entering edge lies in B(n): such an edge is closed given the exploration,
so it carries no boundary excursion.  For a cluster strictly inside B(n) every
entry is of the second kind and the average vanishes.

Walks are killed beyond radius ``8*d*n``.  A walk killed at ``z`` would still
enter ``C`` from neighbour ``z'`` with probability ``~ G(z) Es_C(z') / (2d)``,
so the killed mass is returned analytically through ``G(z) * Q`` where ``Q``
sums ``Es_C(z') * value / (2d)`` over entering edges.
"""

from dataclasses import dataclass
import math

import numpy as np
from numba import njit

import scipy.linalg

from .capacity import equilibrium, _table_for
from .gff import spectral_array
from .greens import free_table, sine_eigenvalues, sine_transform, spectral_columns
from .lattice import DomainError, euclidean_sphere
from .metric import edge_open
from .percolation import Explorer
from .rng import derive_seed, generator, hash_key
from .stats import proportion

KILL_FACTOR = 8
MIN_WALKS = 100


@dataclass(frozen=True)
class ExploredCluster:
    box: object
    radius: int  # exploration radius n
    indices: np.ndarray  # box indices of the cluster vertices
    points: np.ndarray  # (k, d) coordinates
    values: np.ndarray  # field values on the cluster
    field: object = None
    key: int = 0
    scale: float = 1.0  # multiplies the field when the cluster values were rescaled

    def __len__(self):
        return len(self.indices)

    @property
    def touches_boundary(self):
        return bool(len(self.points)) and int(np.abs(self.points).max()) == self.radius

    def scaled(self, c):
        """Same vertex set with values multiplied by ``c``."""
        return ExploredCluster(self.box, self.radius, self.indices, self.points,
                               self.values * c, self.field, self.key, self.scale * c)


@dataclass(frozen=True)
class HarmonicAverage:
    value: float
    sem: float
    sphere_radius: float
    walks: int
    killed_fraction: float
    tail_mass: float  # Q, killed walks contribute G(z) * Q


def explore_cluster(field, n, seed=None, stream=None):
    """Origin's level-0 cluster using only edges with both endpoints in B(n)."""
    box = field.box
    if not 0 <= n <= box.radius:
        raise DomainError("exploration radius must lie in [0, box radius]")
    seed = field.seed if seed is None else seed
    stream = field.stream if stream is None else stream
    key = hash_key(seed, stream)
    idx = Explorer(box).cluster(field.values, [box.center], h=0.0, key=key, limit=int(n))
    idx = np.sort(idx)
    return ExploredCluster(box, int(n), idx, box.coords[idx].astype(np.int64),
                           np.asarray(field.values)[idx].copy(), field, key)


def _entry_pairs(points, values, n):
    """Entering edges (z', w): z' outside C, w in C, with the value carried."""
    d = points.shape[1]
    members = {tuple(p) for p in points.tolist()}
    outside, vals = [], []
    for p, v in zip(points.tolist(), values.tolist()):
        for j in range(d):
            for s in (-1, 1):
                q = list(p)
                q[j] += s
                if tuple(q) in members:
                    continue
                inside = max(abs(c) for c in q) <= n
                outside.append(q)
                vals.append(0.0 if inside else v)
    return np.array(outside, dtype=np.int64).reshape(-1, d), np.array(vals)


def tail_mass(cluster):
    """Q = sum over entering edges of Es_C(z') * value / (2d)."""
    pts, vals = cluster.points, cluster.values
    d = pts.shape[1]
    zp, v = _entry_pairs(pts, vals, cluster.radius)
    if not np.any(v):
        return 0.0
    eq = equilibrium(pts)
    span = int(max(np.abs(zp).max(), np.abs(pts).max())) * 2 + 2
    tab = _table_for(d, span)
    # Es_C(z') = 1 - sum_v G(z' - v) e_C(v), in chunks to bound memory
    es = np.empty(len(zp))
    for lo in range(0, len(zp), 512):
        g = tab.lookup(zp[lo:lo + 512, None, :] - eq.points[None, :, :])
        es[lo:lo + 512] = 1.0 - g @ eq.weights
    return float(np.sum(np.clip(es, 0.0, 1.0) * v) / (2 * d))


@njit(cache=True)
def _harmonic_walks(starts, occ, shape, lo, vals, n, kill2, seed, out_val, out_pos):
    """Walk each start to the cluster or to the kill radius.

    ``occ`` maps bounding-box cells to cluster slots (-1 if empty).  Killed
    walks report their position in ``out_pos`` and value nan."""
    np.random.seed(seed)
    m, d = starts.shape
    pos = np.empty(d, dtype=np.int64)
    prev = np.empty(d, dtype=np.int64)
    for i in range(m):
        for j in range(d):
            pos[j] = starts[i, j]
        while True:
            for j in range(d):
                prev[j] = pos[j]
            k = np.random.randint(0, 2 * d)
            pos[k // 2] += 1 if k % 2 else -1
            inbox = True
            flat = 0
            for j in range(d):
                c = pos[j] - lo[j]
                if c < 0 or c >= shape[j]:
                    inbox = False
                    break
                flat = flat * shape[j] + c
            if inbox and occ[flat] >= 0:
                inner = True
                for j in range(d):
                    if prev[j] > n or prev[j] < -n:
                        inner = False
                        break
                out_val[i] = 0.0 if inner else vals[occ[flat]]
                break
            r2 = 0.0
            for j in range(d):
                r2 += float(pos[j]) * float(pos[j])
            if r2 > kill2:
                out_val[i] = np.nan
                for j in range(d):
                    out_pos[i, j] = pos[j]
                break


def _occupancy(points):
    lo = points.min(axis=0) - 1
    shape = points.max(axis=0) - lo + 2
    occ = np.full(tuple(shape), -1, dtype=np.int64)
    occ[tuple((points - lo).T)] = np.arange(len(points))
    return occ.ravel(), shape.astype(np.int64), lo.astype(np.int64)


def harmonic_average(cluster, n=None, walk_reps=1000, seed=0, sphere_radius=None, kill_factor=KILL_FACTOR):
    """Average over the sphere of radius d*n of H_y, the expected value collected on entry.

    ``walk_reps`` walks start from every sphere point.  Each H_y sample adds
    ``G(z) * Q`` for walks killed at ``z`` (see the module docstring)."""
    if walk_reps < MIN_WALKS:
        raise DomainError(f"walk_reps must be at least {MIN_WALKS}")
    if len(cluster) == 0:
        raise DomainError("cluster is empty")
    n = cluster.radius if n is None else int(n)
    d = cluster.points.shape[1]
    r = float(d * n) if sphere_radius is None else float(sphere_radius)
    if r <= np.abs(cluster.points).max():
        raise DomainError("averaging sphere must enclose the cluster")
    sphere = euclidean_sphere(r, d)
    if not np.any(cluster.values):
        return HarmonicAverage(0.0, 0.0, r, len(sphere) * walk_reps, 0.0, 0.0)
    starts = np.repeat(sphere, walk_reps, axis=0)
    occ, shape, lo = _occupancy(cluster.points)
    out = np.empty(len(starts))
    pos = np.zeros((len(starts), d), dtype=np.int64)
    kill = kill_factor * max(r, 1.0)
    _harmonic_walks(starts, occ, shape, lo, np.ascontiguousarray(cluster.values, dtype=np.float64),
                    n, kill * kill, derive_seed(seed, "harmonic") % (2**32), out, pos)
    killed = np.isnan(out)
    Q = tail_mass(cluster)
    if killed.any():
        kp = pos[killed]
        tab = free_table(d, int(math.ceil(np.abs(kp).max() / 16.0)) * 16)
        out[killed] = tab.lookup(kp) * Q
    # strata are the sphere points; average the per-point means
    per = out.reshape(len(sphere), walk_reps)
    means = per.mean(axis=1)
    var_within = per.var(axis=1, ddof=1).mean()
    sem = math.sqrt(var_within / (walk_reps * len(sphere)))
    return HarmonicAverage(float(means.mean()), sem, r, len(starts), float(killed.mean()), Q)


# ------------------------------------------------------- conditional connectivity

@dataclass(frozen=True)
class Lemma21Report:
    x: tuple
    probability: float
    sem: float
    reps: int
    harmonic: float
    harmonic_sem: float
    prediction: float
    ratio: float


def first_zero_time(a, c, d, rng, grid=4096):
    """First time a bridge (variance 2 per unit time) from a > 0 to -c <= 0 over
    length d hits 0.  A bridge to +c conditioned to hit 0 has the same hitting
    time (reflection after the hit).  Sampled by inverse CDF with t = d(1-(1-u)^2),
    which removes the (d-t)^{-1/2} endpoint singularity."""
    u = (np.arange(grid) + 0.5) / grid
    t = d * (1.0 - (1.0 - u) ** 2)
    s = d - t
    logf = (-1.5 * np.log(t) - a * a / (4 * t) - c * c / (4 * s) - 0.5 * np.log(s)
            + np.log(2 * d * (1.0 - u)))
    w = np.exp(logf - logf.max())
    cdf = np.concatenate([[0.0], np.cumsum(w)])
    cdf /= cdf[-1]
    k = np.searchsorted(cdf, rng.random(), side="right") - 1
    k = min(max(k, 0), grid - 1)
    uu = (k + rng.random()) / grid
    return d * (1.0 - (1.0 - uu) ** 2)


def _boundary_edges(box, cluster):
    """(cluster vertex, neighbour) index pairs with the neighbour in B(n) but not in C."""
    n = cluster.radius
    in_c = set(cluster.indices.tolist())
    cv, nb = [], []
    for i, p in zip(cluster.indices.tolist(), cluster.points.tolist()):
        for j, s in enumerate(box.strides):
            for sg in (-1, 1):
                q = list(p)
                q[j] += sg
                if max(abs(c) for c in q) > n:
                    continue
                w = i + sg * int(s)
                if w not in in_c:
                    cv.append(i)
                    nb.append(w)
    return np.array(cv, dtype=np.int64), np.array(nb, dtype=np.int64)


def _gram(box, idx):
    """G_D restricted to idx x idx, built column batch by column batch."""
    out = np.empty((len(idx), len(idx)))
    step = max(1, min(32, 10**8 // (8 * box.volume)))
    for lo in range(0, len(idx), step):
        out[:, lo:lo + step] = spectral_columns(box, idx[lo:lo + step])[idx]
    return 0.5 * (out + out.T)


def _apply_green(box, lam, idx, coef):
    e = np.zeros(box.shape)
    e.reshape(-1)[idx] = coef
    axes = tuple(range(box.dim))
    z = sine_transform(e, axes) / lam
    return np.ascontiguousarray(sine_transform(z, axes)).reshape(-1)


@njit(cache=True)
def _explore_from_set(phi, side, d, strides, radius, key, sources, in_c, n, stamp_arr, stamp, queue, target):
    """BFS of the level-0 opening from the cluster vertices, keeping closed every
    edge between the cluster and B(n) minus the cluster.  Returns True when
    ``target`` is reached."""
    m = 0
    for s in sources:
        stamp_arr[s] = stamp
        queue[m] = s
        m += 1
    head = 0
    while head < m:
        v = queue[head]
        head += 1
        for ax in range(d):
            st = strides[ax]
            c = (v // st) % side
            for sgn in range(2):
                if sgn == 0:
                    if c == 0:
                        continue
                    w = v - st
                    lo = w
                else:
                    if c == side - 1:
                        continue
                    w = v + st
                    lo = v
                if stamp_arr[w] == stamp:
                    continue
                if in_c[v]:
                    inside = True
                    for a2 in range(d):
                        cw = (w // strides[a2]) % side - radius
                        if cw > n or cw < -n:
                            inside = False
                            break
                    if inside:
                        continue
                if edge_open(phi[v], phi[w], 0.0, d, key, lo * d + ax, 0):
                    if w == target:
                        return True
                    stamp_arr[w] = stamp
                    queue[m] = w
                    m += 1
    return False


class ConditionalSampler:
    """Fields on the box conditioned on what exploring the cluster reveals.

    The exploration fixes the cluster values and, on each closed edge from a
    cluster vertex w to a neighbour z inside B(n), the point at distance t
    from w where the bridge first vanishes.  Markov property: the piece of
    edge between that zero and z then acts as a conductor of length d - t to
    ground, while the density of the original edge term is divided out.  Per
    neighbour z this is the Gaussian factor exp(-a_z phi_z^2 / 2 - b_z phi_z)
    with a_z = sum_e (1/(d - t_e) - 1/d) / 2 and b_z = sum_e phi_w / (2d),
    i.e. a noisy observation -b_z/a_z with variance 1/a_z.  Exact cluster
    values plus these observations are imposed on an unconditioned sample by
    perturbed-observation kriging."""

    def __init__(self, cluster, seed=0):
        if cluster.field is None:
            raise DomainError("conditioning needs the field the cluster was explored in")
        box = cluster.box
        d = box.dim
        self.box, self.cluster = box, cluster
        self.lam = sine_eigenvalues(box)
        C = cluster.indices
        cv, nb = _boundary_edges(box, cluster)
        phi0 = np.asarray(cluster.field.values) * cluster.scale
        rng = generator(derive_seed(seed, "first-zero"), 0)
        t = np.array([first_zero_time(phi0[w], abs(phi0[z]), d, rng) for w, z in zip(cv, nb)])
        S, inv = np.unique(nb, return_inverse=True)
        a = np.zeros(len(S))
        b = np.zeros(len(S))
        np.add.at(a, inv, 0.5 * (1.0 / (d - t) - 1.0 / d))
        np.add.at(b, inv, phi0[cv] / (2 * d))
        self.obs = np.concatenate([C, S])
        self.target = np.concatenate([cluster.values, -b / a if len(S) else np.empty(0)])
        self.noise_sd = np.concatenate([np.zeros(len(C)), 1.0 / np.sqrt(a)])
        K = _gram(box, self.obs)
        K[np.diag_indices_from(K)] += self.noise_sd**2
        self.chol = scipy.linalg.cho_factor(K, lower=True)
        self.in_c = np.zeros(box.volume, dtype=np.bool_)
        self.in_c[C] = True

    def sample(self, rng):
        psi = spectral_array(self.box, rng)
        resid = self.target - psi[self.obs] - self.noise_sd * rng.standard_normal(len(self.obs))
        coef = scipy.linalg.cho_solve(self.chol, resid)
        phi = psi + _apply_green(self.box, self.lam, self.obs, coef)
        phi[self.cluster.indices] = self.cluster.values
        return phi


def lemma21_check(cluster, x, reps=200, seed=0, walk_reps=200, harmonic=None):
    """Conditional probability, given the exploration of ``cluster``, that it connects to ``x``.

    Reports the ratio to ``(|x|^{2-d} n^{d-2} Hbar) ^ 1``."""
    return lemma21_band(cluster, [x], reps, seed, walk_reps, harmonic)[0]


def lemma21_band(cluster, xs, reps=200, seed=0, walk_reps=200, harmonic=None):
    """:func:`lemma21_check` for several targets on one set of conditional samples."""
    box = cluster.box
    n = cluster.radius
    d = box.dim
    xs = [tuple(int(c) for c in x) for x in xs]
    if len(cluster) == 0:
        raise DomainError("cluster is empty")
    if np.any(cluster.values < 0):
        raise DomainError("cluster values must be nonnegative")
    for x in xs:
        if max(abs(c) for c in x) <= 2 * d * n:
            raise DomainError("x must lie outside B(2dn)")
        if not box.contains(x):
            raise DomainError("x outside the sampling box")
    if harmonic is None:
        harmonic = harmonic_average(cluster, n, walk_reps, derive_seed(seed, "hbar"))
    sampler = ConditionalSampler(cluster, seed)
    targets = [box.index(x) for x in xs]
    stamp = np.zeros(box.volume, dtype=np.int32)
    queue = np.empty(box.volume, dtype=np.int64)
    hits = np.zeros(len(xs), dtype=np.int64)
    base = derive_seed(seed, "lemma21")
    tick = 0
    for r in range(reps):
        phi = sampler.sample(generator(base, r))
        key = hash_key(base, r)
        for j, t in enumerate(targets):
            if phi[t] < 0:
                continue
            tick += 1
            hits[j] += _explore_from_set(phi, box.side, d, box.strides, box.radius, key, cluster.indices,
                                         sampler.in_c, n, stamp, tick, queue, t)
    out = []
    for x, k in zip(xs, hits):
        est = proportion(int(k), reps)
        xn = math.sqrt(sum(c * c for c in x))
        pred = min(1.0, xn ** (2 - d) * n ** (d - 2) * harmonic.value)
        ratio = est.mean / pred if pred > 0 else math.nan
        out.append(Lemma21Report(x, est.mean, est.sem, reps, harmonic.value, harmonic.sem, pred, ratio))
    return out
