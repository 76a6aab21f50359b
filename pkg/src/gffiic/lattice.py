"""Geometry of boxes B(N) = [-N, N]^d, Euclidean balls and annuli in Z^d.

Vertices of a box are stored densely in row-major order over coordinates
shifted by +N, so axis ``j`` has stride ``L**(d-1-j)`` with ``L = 2N+1``.
An edge is identified by its lower endpoint ``i`` (smaller linear index) and
its axis ``j``; the canonical edge id is ``i*d + j``.
"""

from dataclasses import dataclass
from functools import cached_property
import itertools

import numpy as np


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class CapacityError(MemoryError):
    """Problem too large for the requested dense method."""


def as_point(p, dim=None):
    t = tuple(int(c) for c in p)
    if dim is not None and len(t) != dim:
        raise DomainError(f"point {t} does not have dimension {dim}")
    return t


@dataclass(frozen=True)
class BoxGeom:
    dim: int
    radius: int

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("dimension must be positive")
        if self.radius < 0:
            raise DomainError("box radius must be >= 0")

    @property
    def side(self):
        return 2 * self.radius + 1

    @property
    def shape(self):
        return (self.side,) * self.dim

    @property
    def volume(self):
        return self.side**self.dim

    @cached_property
    def strides(self):
        return np.array([self.side ** (self.dim - 1 - j) for j in range(self.dim)], dtype=np.int64)

    @property
    def center(self):
        return self.index((0,) * self.dim)

    def contains(self, p):
        return len(p) == self.dim and all(-self.radius <= c <= self.radius for c in p)

    def index(self, p):
        p = as_point(p, self.dim)
        if not self.contains(p):
            raise DomainError(f"{p} is outside B({self.radius})")
        return int(sum((c + self.radius) * s for c, s in zip(p, self.strides)))

    def point(self, i):
        if not 0 <= i < self.volume:
            raise DomainError(f"index {i} out of range")
        out = []
        for s in self.strides:
            q, i = divmod(int(i), int(s))
            out.append(q - self.radius)
        return tuple(out)

    def indices(self, points):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, self.dim)
        if np.any(np.abs(pts) > self.radius):
            raise DomainError("point outside box")
        return (pts + self.radius) @ self.strides

    @cached_property
    def coords(self):
        """(V, d) array of coordinates of every vertex in index order."""
        grids = np.indices(self.shape, dtype=np.int64).reshape(self.dim, -1).T
        return grids - self.radius

    @cached_property
    def sup_norm(self):
        """|x|_inf per vertex (int16 is enough for any box that fits in memory)."""
        return np.abs(self.coords).max(axis=1).astype(np.int32)

    def edge_id(self, i, j):
        """Canonical id of the edge between vertices with linear indices i, j."""
        lo, hi = (i, j) if i < j else (j, i)
        diff = hi - lo
        for axis, s in enumerate(self.strides):
            if diff == s and (lo // s) % self.side != self.side - 1:
                return lo * self.dim + axis
        raise DomainError(f"vertices {i} and {j} are not adjacent")


@dataclass(frozen=True)
class Annulus:
    inner: int
    outer: int

    def __post_init__(self):
        if not 1 <= self.inner < self.outer:
            raise DomainError(f"annulus needs 1 <= n < N, got n={self.inner}, N={self.outer}")


def _unit_steps(dim):
    # fixed order -e1, +e1, ..., -ed, +ed
    for j in range(dim):
        for s in (-1, 1):
            e = [0] * dim
            e[j] = s
            yield tuple(e)


def neighbors(p, box):
    p = as_point(p, box.dim)
    if not box.contains(p):
        raise DomainError(f"{p} is outside B({box.radius})")
    out = []
    for e in _unit_steps(box.dim):
        q = tuple(a + b for a, b in zip(p, e))
        if box.contains(q):
            out.append(q)
    return out


def inner_boundary(box):
    """Vertices of B(N) having a lattice neighbour outside B(N)."""
    mask = box.sup_norm == box.radius
    return {tuple(int(c) for c in row) for row in box.coords[mask]}


def inner_boundary_mask(box):
    return box.sup_norm == box.radius


def euclidean_ball(m, dim):
    """{y in Z^d : |y| <= m} as a set of tuples."""
    return {tuple(int(c) for c in row) for row in euclidean_ball_array(m, dim)}


def euclidean_ball_array(m, dim):
    r = int(np.floor(m))
    ax = np.arange(-r, r + 1)
    grid = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    sq = (grid**2).sum(axis=1)
    return grid[sq <= m * m + 1e-9]


def euclidean_sphere(m, dim):
    """Discrete sphere of the ball: points of ball(m) with a neighbour outside it."""
    pts = euclidean_ball_array(m, dim)
    sq = (pts**2).sum(axis=1)
    lim = m * m + 1e-9
    on = np.zeros(len(pts), dtype=bool)
    for j in range(dim):
        for s in (-1, 1):
            q = sq + 2 * s * pts[:, j] + 1
            on |= q > lim
    return pts[on]


def box_points(radius, dim):
    ax = range(-radius, radius + 1)
    return list(itertools.product(ax, repeat=dim))
