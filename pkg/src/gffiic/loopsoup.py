"""Discrete-time random-walk loop soup on a box, and the sign-cluster route to
critical loop clusters.

The rooted loop measure gives a length-k loop at x the mass ``q_k(x,x)/k``,
``q_k`` being the return probability of the walk killed on leaving the box.
A soup at intensity alpha draws an independent Poisson count for every
(root, length) bucket and fills each counted loop with a walk bridge.
"""

from dataclasses import dataclass
import math

import numpy as np
from numba import njit

from .gff import sample_spectral
from .greens import killed_transition, sine_eigenvalues
from .lattice import CapacityError, DomainError
from .percolation import ClusterLabeling, Explorer
from .rng import derive_seed, generator, hash_key
from .stats import ks_pvalue, mean_estimate

DENSE_LOOP_LIMIT = 3000
DEFAULT_TAIL_TOL = 1e-3


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RootedLoop:
    root: int  # box index
    steps: np.ndarray  # box indices, length k+1, steps[0] == steps[-1] == root

    @property
    def length(self):
        return len(self.steps) - 1


@dataclass(frozen=True)
class LoopSoupSample:
    alpha: float
    box: object
    loops: tuple
    K_max: int
    seed: int
    stream: int


@dataclass(frozen=True)
class OccupationField:
    visits: np.ndarray


def _sine_modes_1d(L):
    j = np.arange(1, L + 1)
    return np.sqrt(2.0 / (L + 1)) * np.sin(np.pi * np.outer(j, j) / (L + 1))


def return_probabilities(box, K_max):
    """q_k(x,x) for every vertex and 0 <= k <= K_max, shape (V, K_max+1).

    With P = U diag(mu) U^T on the product sine modes, q_k(x,x) = sum_m U_xm^2 mu_m^k.
    U_xm^2 factorises over coordinates, so the squared-mode matrix is a
    Kronecker product and the whole table is one matrix product."""
    if box.volume > DENSE_LOOP_LIMIT:
        raise CapacityError(f"loop tables need V <= {DENSE_LOOP_LIMIT}, got {box.volume}")
    s2 = _sine_modes_1d(box.side) ** 2
    W = s2
    for _ in range(box.dim - 1):
        W = np.kron(W, s2)
    mu = (1.0 - sine_eigenvalues(box)).reshape(-1)
    powers = mu[:, None] ** np.arange(K_max + 1)[None, :]
    q = W @ powers
    q[:, 1::2] = 0.0  # bipartite: odd returns vanish exactly
    return np.maximum(q, 0.0)


def truncation_bound(box, K_max):
    """Upper bound on sum_x sum_{k > K_max} q_k(x,x)/k via the spectral radius."""
    if box.side == 0:
        return 0.0
    rho = math.cos(math.pi / (box.side + 1))
    return box.volume * rho ** (K_max + 1) / ((K_max + 1) * (1.0 - rho))


def _neighbour_table(box):
    V, d = box.volume, box.dim
    idx = np.arange(V)
    nbr = np.full((V, 2 * d), -1, dtype=np.int64)
    for j, s in enumerate(box.strides):
        c = (idx // s) % box.side
        nbr[:, 2 * j] = np.where(c > 0, idx - s, -1)
        nbr[:, 2 * j + 1] = np.where(c < box.side - 1, idx + s, -1)
    return nbr


@njit(cache=True)
def _bridge(root, k, kern, nbr, u):
    """Walk bridge root -> root of length k: at step j from y, move to z with
    probability proportional to kern[k-j-1, z] = P^{k-j-1}(z, root)."""
    path = np.empty(k + 1, dtype=np.int64)
    path[0] = root
    y = root
    for j in range(k):
        r = k - j - 1
        tot = 0.0
        for a in range(nbr.shape[1]):
            z = nbr[y, a]
            if z >= 0:
                tot += kern[r, z]
        x = u[j] * tot
        acc = 0.0
        nxt = -1
        for a in range(nbr.shape[1]):
            z = nbr[y, a]
            if z >= 0 and kern[r, z] > 0.0:
                acc += kern[r, z]
                nxt = z
                if x < acc:
                    break
        y = nxt
        path[j + 1] = y
    return path


class LoopSoupModel:
    """Return-probability table, truncation check and bridge kernels for one box."""

    def __init__(self, box, K_max, tail_tol=DEFAULT_TAIL_TOL):
        if K_max < 2:
            raise DomainError("K_max must be at least 2")
        self.box = box
        self.K_max = int(K_max)
        self.tail = truncation_bound(box, K_max)
        if self.tail > tail_tol:
            raise ConfigurationError(
                f"residual loop mass bound {self.tail:.3g} exceeds {tail_tol:g} at K_max={K_max}; "
                f"raise K_max")
        self.q = return_probabilities(box, self.K_max)
        self.nbr = _neighbour_table(box)
        self._P = killed_transition(box)
        self._kern = {}

    def kernel(self, root):
        """Rows P^m e_root for m = 0..K_max."""
        k = self._kern.get(root)
        if k is None:
            k = np.empty((self.K_max + 1, self.box.volume))
            v = np.zeros(self.box.volume)
            v[root] = 1.0
            for m in range(self.K_max + 1):
                k[m] = v
                v = self._P @ v
            self._kern[root] = k
        return k

    def loop_mass(self, alpha):
        """Expected loop counts alpha*q_k(x,x)/k per (root, length), zero for k < 2."""
        k = np.arange(self.K_max + 1, dtype=np.float64)
        mass = np.zeros_like(self.q)
        mass[:, 2:] = alpha * self.q[:, 2:] / k[2:]
        return mass


def sample_loop_soup(box, alpha, K_max, seed=0, stream=0, model=None, tail_tol=DEFAULT_TAIL_TOL):
    """Poisson loop soup at intensity alpha, loops of length 2..K_max.

    All bucket counts of one soup come from the generator of (seed, stream) in
    a single vectorised draw, then each loop's bridge uniforms in bucket order."""
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    model = model or LoopSoupModel(box, K_max, tail_tol)
    if model.box != box or model.K_max != K_max:
        raise DomainError("model built for a different box or K_max")
    if alpha == 0:
        return LoopSoupSample(0.0, box, (), K_max, int(seed), int(stream))
    rng = generator(derive_seed(seed, "loop-soup"), stream)
    counts = rng.poisson(model.loop_mass(alpha))
    loops = []
    for x, k in zip(*np.nonzero(counts)):
        kern = model.kernel(int(x))
        for _ in range(counts[x, k]):
            path = _bridge(int(x), int(k), kern, model.nbr, rng.random(int(k)))
            loops.append(RootedLoop(int(x), path))
    return LoopSoupSample(float(alpha), box, tuple(loops), K_max, int(seed), int(stream))


def occupation_field(sample):
    """Visits per vertex, counting positions 0..k-1 of each loop (the root once)."""
    visits = np.zeros(sample.box.volume, dtype=np.int64)
    for lp in sample.loops:
        np.add.at(visits, lp.steps[:-1], 1)
    return OccupationField(visits)


def expected_visits(model, alpha):
    """alpha * sum_{2 <= k <= K_max} q_k(x,x): the exact mean of the occupation field."""
    return alpha * model.q[:, 2:].sum(axis=1)


def loop_clusters(sample):
    """Union-find over loops sharing a vertex; unvisited vertices get -1."""
    V = sample.box.volume
    parent = np.arange(V)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    seen = np.zeros(V, dtype=bool)
    for lp in sample.loops:
        verts = np.unique(lp.steps)
        seen[verts] = True
        r0 = find(verts[0])
        for v in verts[1:]:
            r = find(v)
            if r != r0:
                parent[r] = r0
    root = np.array([find(v) if seen[v] else -1 for v in range(V)], dtype=np.int64)
    return ClusterLabeling(sample.box, math.nan, root)


@dataclass(frozen=True)
class SignClusterReport:
    reps: int
    p_positive_arm: float
    p_sign_arm: float
    difference: float  # mean of 1{positive arm} - 1{sign arm}/2
    difference_sem: float
    z: float
    ks_pvalue: float  # positive vs negative origin sign-cluster volumes
    volume_positive: np.ndarray
    volume_negative: np.ndarray


def sign_cluster_equivalence(box, reps, seed=0):
    """Factor-two identity between level-0 and sign-cluster one-arm events.

    The critical loop clusters at alpha = 1/2 are the GFF sign clusters.  On
    the coupled opening, the origin's level-0 cluster is its sign cluster when
    phi_0 >= 0 and empty otherwise, so the paired difference
    1{positive arm} - 1{sign arm}/2 has mean zero exactly; its z-score is
    reported.  Volumes of positive and negative origin clusters are compared
    by a two-sample KS test."""
    ex = Explorer(box)
    c = box.center
    d = np.empty(reps)
    pos = np.zeros(reps, dtype=bool)
    sgn = np.zeros(reps, dtype=bool)
    vol_p, vol_n = [], []
    for r in range(reps):
        f = sample_spectral(box, seed, r)
        key = hash_key(seed, r)
        m = ex.cluster(f.values, [c], key=key, sign=True)
        reach = bool(box.sup_norm[m].max() >= box.radius)
        positive = f.values[c] >= 0
        sgn[r] = reach
        pos[r] = reach and positive
        (vol_p if positive else vol_n).append(len(m))
        d[r] = pos[r] - 0.5 * sgn[r]
    est = mean_estimate(d)
    z = est.mean / est.sem if est.sem > 0 else 0.0
    ks = ks_pvalue(vol_p, vol_n) if vol_p and vol_n else math.nan
    return SignClusterReport(reps, float(pos.mean()), float(sgn.mean()), est.mean, est.sem, z, ks,
                             np.array(vol_p), np.array(vol_n))
