"""Green's functions of discrete-time simple random walk.

``G(0, x)`` counts expected visits to ``x`` including time 0.  The free
Green's function is evaluated from its Fourier representation
``(2pi)^-d \\int cos(k.x) / (1 - d^-1 sum_j cos k_j) dk`` after integrating
out the angles exactly:  ``1/(1-phi) = \\int_0^inf e^{-t(1-phi)} dt`` turns the
d-dimensional integral into ``\\int_0^inf prod_j I_{x_j}(t/d) e^{-t} dt``.
That one-dimensional integral is done with the trapezoid rule in ``log t``
(with an Euler-Maclaurin end correction) plus the closed-form Gaussian tail
beyond ``t = 1e9``; halving the step changes the result by < 1e-12.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from numba import njit
import scipy.fft
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.special import gamma, gammainc, ive

from .lattice import BoxGeom, CapacityError, DomainError, as_point

T_MAX = 1e9  # scipy's ive loses accuracy past ~2e9
U_MIN = -40.0
DEFAULT_STEP = 0.1
DENSE_LIMIT = 6000
TABLE_LIMIT = 2 * 10**7  # entries of a tabulated free Green's function


def _nodes(step):
    ub = math.log(T_MAX)
    n = int(math.ceil((ub - U_MIN) / step))
    u = np.linspace(U_MIN, ub, n + 1)
    h = u[1] - u[0]
    t = np.exp(u)
    w = np.full(n + 1, h) * t
    w[0] *= 0.5
    w[-1] *= 0.5
    return t, w, h


def _tail(d, sq):
    """\\int_{T_MAX}^inf (d/2pi t)^{d/2} exp(-d|x|^2/2t) dt, vectorised over |x|^2."""
    sq = np.asarray(sq, dtype=np.float64)
    s = d / 2.0 - 1.0
    c = (d / (2 * math.pi)) ** (d / 2)
    a = d * sq / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = c * np.where(a > 0, a ** (-s) * gammainc(s, a / T_MAX) * gamma(s), 0.0)
    return np.where(a > 0, out, c * T_MAX ** (-s) / s)


def _end_slope(d, sq, f_end):
    # d/du of the integrand at u = log T_MAX using its Gaussian asymptotics
    return f_end * ((1.0 - d / 2.0) + d * np.asarray(sq) / 2.0 / T_MAX)


def free_green(d, x, step=DEFAULT_STEP):
    """G(0, x) for simple random walk on Z^d (d >= 3)."""
    if d < 3:
        raise DomainError("simple random walk is recurrent for d <= 2")
    x = as_point(x, d)
    t, w, h = _nodes(step)
    f = np.ones_like(t)
    for c in x:
        f *= ive(abs(c), t / d)
    sq = sum(c * c for c in x)
    body = float(np.dot(w, f))
    body -= h * h / 12.0 * float(_end_slope(d, sq, f[-1] * t[-1]))
    return body + float(_tail(d, sq))


@dataclass
class FreeGreenTable:
    """G(0, x) for every |x|_inf <= radius, indexed by absolute coordinates."""

    dim: int
    radius: int
    values: np.ndarray
    method: dict = field(default_factory=dict)

    def __call__(self, x):
        a = tuple(abs(int(c)) for c in x)
        if max(a) > self.radius:
            return free_green(self.dim, a)
        return float(self.values[a])

    def lookup(self, disp):
        """Vectorised lookup for an (..., d) integer displacement array."""
        a = np.abs(np.asarray(disp, dtype=np.int64))
        if a.size and a.max() > self.radius:
            raise DomainError(f"displacement beyond table radius {self.radius}")
        return self.values[tuple(np.moveaxis(a, -1, 0))]

    def save(self, path):
        np.savez_compressed(path, dim=self.dim, radius=self.radius, values=self.values,
                            step=self.method.get("step", DEFAULT_STEP))

    @classmethod
    def load(cls, path):
        z = np.load(path)
        return cls(int(z["dim"]), int(z["radius"]), z["values"],
                   {"kind": "bessel-quadrature", "step": float(z["step"]), "source": str(path)})


def build_free_table(d, radius, step=DEFAULT_STEP, chunk=128):
    """Tabulate G on [0, radius]^d with the same quadrature as :func:`free_green`."""
    if d < 3:
        raise DomainError("simple random walk is recurrent for d <= 2")
    if (radius + 1) ** d > TABLE_LIMIT:
        raise CapacityError(f"a radius-{radius} table in d={d} exceeds {TABLE_LIMIT} entries")
    t, w, h = _nodes(step)
    n = np.arange(radius + 1)
    R = radius + 1
    out = np.zeros(R**d)
    for lo in range(0, len(t), chunk):
        tk = t[lo:lo + chunk]
        T = ive(n[:, None], tk[None, :] / d)  # (R, k)
        P = T
        for _ in range(d - 2):
            P = (P[:, None, :] * T[None, :, :]).reshape(-1, len(tk))
        out += (P @ (T * w[lo:lo + chunk]).T).reshape(-1)
    values = out.reshape((R,) * d)
    grids = np.indices((R,) * d)
    sq = (grids**2).sum(axis=0)
    T_end = ive(n, t[-1] / d)
    f_end = np.ones((R,) * d) * t[-1]
    for j in range(d):
        shape = [1] * d
        shape[j] = R
        f_end = f_end * T_end.reshape(shape)
    values -= h * h / 12.0 * _end_slope(d, sq, f_end)
    values += _tail(d, sq)
    return FreeGreenTable(d, radius, values, {"kind": "bessel-quadrature", "step": step})


@lru_cache(maxsize=8)
def free_table(d, radius):
    return build_free_table(d, radius)


@njit(cache=True)
def _visit_walks(d, target, walks, steps, seed):
    np.random.seed(seed)
    counts = np.zeros(walks)
    pos = np.zeros(d, dtype=np.int64)
    for w in range(walks):
        pos[:] = 0
        c = 0.0
        for k in range(steps + 1):
            hit = True
            for j in range(d):
                if pos[j] != target[j]:
                    hit = False
                    break
            if hit:
                c += 1.0
            r = np.random.randint(0, 2 * d)
            pos[r // 2] += 1 if r % 2 else -1
        counts[w] = c
    return counts


def visit_count_oracle(d, x, walks=20000, steps=20000, seed=0):
    """Monte Carlo G(0, x): mean visits by walks of ``steps`` steps plus the
    local-CLT tail sum_{k > steps} p_k(0, x) ~ 2 (d/2pi)^{d/2} steps^{1-d/2}/(d-2).

    Returns (estimate, standard error)."""
    x = np.asarray(as_point(x, d), dtype=np.int64)
    counts = _visit_walks(d, x, walks, steps, int(seed) % (2**32))
    c = (d / (2 * math.pi)) ** (d / 2)
    tail = c * steps ** (1 - d / 2) / (d / 2 - 1)
    return counts.mean() + tail, counts.std(ddof=1) / math.sqrt(walks)


def arcsin_two_point(g_xy, g_xx, g_yy, tol=1e-9):
    """pi^-1 arcsin(g_xy / sqrt(g_xx g_yy))."""
    if g_xx <= 0 or g_yy <= 0:
        raise DomainError("diagonal Green values must be positive")
    r = g_xy / math.sqrt(g_xx * g_yy)
    if r > 1 + tol or r < -1 - tol:
        raise DomainError(f"correlation {r} outside [-1, 1]")
    return math.asin(min(1.0, max(-1.0, r))) / math.pi


def killed_transition(box):
    """Sparse SRW transition matrix on B(N) with killing on exit."""
    V, d = box.volume, box.dim
    rows, cols = [], []
    idx = np.arange(V)
    for j, s in enumerate(box.strides):
        c = (idx // s) % box.side
        ok = c < box.side - 1
        rows.append(idx[ok])
        cols.append(idx[ok] + s)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    data = np.full(2 * len(r), 1.0 / (2 * d))
    return scipy.sparse.csr_matrix((data, (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(V, V))


def sine_eigenvalues(box):
    """Eigenvalues of I - P_box on the product sine modes, in box index order."""
    L = box.side
    k = np.arange(1, L + 1)
    c = np.cos(np.pi * k / (L + 1))
    lam = np.zeros(box.shape)
    for j in range(box.dim):
        shape = [1] * box.dim
        shape[j] = L
        lam = lam + c.reshape(shape)
    return 1.0 - lam / box.dim


@dataclass
class DirichletGreen:
    """G_D on B(N), killing on exit.  Dense below DENSE_LIMIT vertices, else columns on demand."""

    box: BoxGeom
    matrix: np.ndarray = None

    def column(self, y):
        i = self.box.index(y) if not isinstance(y, (int, np.integer)) else int(y)
        if self.matrix is not None:
            return self.matrix[:, i]
        A = scipy.sparse.identity(self.box.volume, format="csr") - killed_transition(self.box)
        e = np.zeros(self.box.volume)
        e[i] = 1.0
        col, info = scipy.sparse.linalg.cg(A, e, rtol=1e-12, atol=0.0, maxiter=20 * self.box.volume)
        if info != 0:
            raise RuntimeError(f"conjugate-gradient solve did not converge (info={info})")
        return col

    def __call__(self, x, y):
        i, j = self.box.index(x), self.box.index(y)
        if self.matrix is not None:
            return float(self.matrix[i, j])
        return float(self.column(j)[i])


def dirichlet_green(box, dense=None):
    """Inverse of (I - P_box) for the SRW killed on leaving B(N)."""
    V = box.volume
    if dense is None:
        dense = V <= DENSE_LIMIT
    if not dense:
        return DirichletGreen(box, None)
    if V > DENSE_LIMIT:
        raise CapacityError(f"dense Dirichlet Green needs V <= {DENSE_LIMIT}, got {V}")
    A = np.eye(V) - killed_transition(box).toarray()
    G = scipy.linalg.solve(A, np.eye(V), assume_a="pos")
    return DirichletGreen(box, 0.5 * (G + G.T))


def _fft_friendly(n):
    # pocketfft falls back to Bluestein for large prime factors of the padded length
    m, p = 2 * (n + 1), 2
    while p * p <= m:
        while m % p == 0:
            m //= p
        p += 1
    return m <= 31


@lru_cache(maxsize=4)
def _sine_matrix(n):
    j = np.arange(1, n + 1)
    return np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(j, j) / (n + 1))


def sine_transform(z, axes):
    """Orthonormal type-I sine transform over ``axes``, in place when possible."""
    n = z.shape[axes[0]]
    if _fft_friendly(n) or n > 1024:
        return scipy.fft.idstn(z, type=1, norm="ortho", axes=axes, overwrite_x=True)
    S = _sine_matrix(n)  # symmetric
    for ax in axes:
        z = np.moveaxis(np.tensordot(z, S, axes=([ax], [0])), -1, ax)
    return z


def spectral_columns(box, idx, max_bytes=2 * 10**8):
    """Columns G_D[:, idx] through the sine diagonalisation, O(V log V) each."""
    idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
    lam = sine_eigenvalues(box)
    out = np.empty((len(idx), box.volume))
    axes = tuple(range(1, box.dim + 1))
    batch = max(1, min(32, max_bytes // (8 * box.volume)))
    for lo in range(0, len(idx), batch):
        part = idx[lo:lo + batch]
        e = np.zeros((len(part), box.volume))
        e[np.arange(len(part)), part] = 1.0
        z = sine_transform(e.reshape((len(part),) + box.shape), axes) / lam
        out[lo:lo + len(part)] = np.ascontiguousarray(sine_transform(z, axes)).reshape(len(part), -1)
    return out.T
