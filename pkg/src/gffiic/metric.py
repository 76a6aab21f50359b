"""Vertex connectivity of the metric-graph level set {phi >= h}.

Each edge of Z^d is an interval of length d carrying a Brownian bridge driven
by variance-2 Brownian motion between the two vertex values.  Such a bridge
from a to b (both above h) stays above h with probability
``1 - exp(-(a-h)(b-h)/d)``; an edge is open when its uniform falls below that.
"""

from dataclasses import dataclass
import math

import numpy as np
from numba import njit

from .lattice import DomainError
from .rng import generator, hash_key, uniform_at, uniforms
from .stats import Estimate


def bridge_open_prob(a, b, h=0.0, d=3):
    """P(bridge from a to b over length d stays strictly above h)."""
    if d < 3:
        raise DomainError("metric graph edges have length d >= 3")
    if a < h or b < h:
        return 0.0
    return -math.expm1(-(a - h) * (b - h) / d)


def bridge_open_prob_array(a, b, h=0.0, d=3):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    with np.errstate(over="ignore"):
        p = -np.expm1(-(a - h) * (b - h) / d)
    return np.where((a >= h) & (b >= h), p, 0.0)


@njit(cache=True)
def edge_open(a, b, h, d, key, eid, mode):
    """Kernel edge rule.  mode 0: level set {phi >= h}; mode 1: sign clusters."""
    if mode == 0:
        if a < h or b < h:
            return False
        p = -math.expm1(-(a - h) * (b - h) / d)
    else:
        if (a >= 0.0) != (b >= 0.0):
            return False
        p = -math.expm1(-(a * b) / d)
    return uniform_at(key, eid) < p


def bridge_hit_oracle(a, b, h=0.0, steps=1000, reps=100000, seed=0, d=3, extrapolate=True,
                      chunk=4000):
    """Monte Carlo stay-above-h probability of a discretised bridge.

    The bridge is a pinned Gaussian walk with per-step variance 2*d/steps from
    a to b.  Monitoring only at grid times misses crossings between grid points,
    so the raw estimate is biased upwards by O(steps^-1/2).  With
    ``extrapolate`` each replicate is simulated on 2*steps points and the
    coarse path is its even-indexed subsequence; the per-replicate Richardson
    combination (sqrt2*I_fine - I_coarse)/(sqrt2 - 1) removes the leading bias.
    """
    if steps < 100 or reps < 1000:
        raise DomainError("bridge oracle needs steps >= 100 and reps >= 1000")
    rng = generator(seed, 0)
    fine = 2 * steps if extrapolate else steps
    sd = math.sqrt(2.0 * d / fine)
    frac = np.arange(1, fine + 1) / fine
    vals = np.empty(reps)
    r2 = math.sqrt(2.0)
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        w = np.cumsum(rng.standard_normal((m, fine)) * sd, axis=1)
        path = a + w - frac * w[:, -1:] + frac * (b - a)
        ok_f = (path[:, :-1] > h).all(axis=1) & (a > h) & (b > h)
        if extrapolate:
            ok_c = (path[:, 1:-1:2] > h).all(axis=1) & (a > h) & (b > h)
            vals[done:done + m] = (r2 * ok_f - ok_c) / (r2 - 1.0)
        else:
            vals[done:done + m] = ok_f
        done += m
    note = ("step-doubled Richardson estimate" if extrapolate else
            "grid-monitored estimate; underestimates crossings (bias O(steps^-1/2))")
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps)), reps, None, None, note)


@dataclass(frozen=True)
class LevelSetGraph:
    box: object
    level: float
    active: np.ndarray  # bool per vertex
    open: np.ndarray  # bool per canonical edge id (V*d; ids of missing edges stay False)
    seed: int
    stream: int

    @property
    def key(self):
        return hash_key(self.seed, self.stream)

    def edge_list(self):
        """(lo, hi) vertex index pairs of open edges."""
        eid = np.flatnonzero(self.open)
        lo = eid // self.box.dim
        hi = lo + self.box.strides[eid % self.box.dim]
        return lo, hi


def edge_arrays(box):
    """Lower endpoints and axes of every existing edge, in canonical id order."""
    idx = np.arange(box.volume, dtype=np.int64)
    eids = []
    for j, s in enumerate(box.strides):
        ok = (idx // s) % box.side < box.side - 1
        eids.append(idx[ok] * box.dim + j)
    eid = np.sort(np.concatenate(eids))
    return eid // box.dim, eid % box.dim, eid


def open_level_set(field, h=None, seed=None, stream=None):
    """Open/closed state of every edge of B(N) for the level set {phi >= h}.

    ``h`` defaults to the level annotated on the field; ``seed``/``stream``
    default to the field's own addressing, so edge uniforms are shared across
    levels (monotone coupling)."""
    box = field.box
    h = field.level if h is None else float(h)
    seed = field.seed if seed is None else seed
    stream = field.stream if stream is None else stream
    phi = field.values
    lo, axis, eid = edge_arrays(box)
    hi = lo + box.strides[axis]
    p = bridge_open_prob_array(phi[lo], phi[hi], h, box.dim)
    u = uniforms(hash_key(seed, stream), eid)
    is_open = np.zeros(box.volume * box.dim, dtype=bool)
    is_open[eid] = u < p
    return LevelSetGraph(box, h, phi >= h, is_open, int(seed), int(stream))


def sign_graph(field, seed=None, stream=None):
    """Edges of the sign clusters: same-sign endpoints and a bridge avoiding 0."""
    box = field.box
    seed = field.seed if seed is None else seed
    stream = field.stream if stream is None else stream
    phi = field.values
    lo, axis, eid = edge_arrays(box)
    hi = lo + box.strides[axis]
    a, b = phi[lo], phi[hi]
    same = (a >= 0) == (b >= 0)
    p = np.where(same, -np.expm1(-np.abs(a * b) / box.dim), 0.0)
    u = uniforms(hash_key(seed, stream), eid)
    is_open = np.zeros(box.volume * box.dim, dtype=bool)
    is_open[eid] = u < p
    return LevelSetGraph(box, 0.0, np.ones(box.volume, dtype=bool), is_open, int(seed), int(stream))
