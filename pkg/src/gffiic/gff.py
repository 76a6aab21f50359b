"""Exact sampling of the zero-boundary discrete GFF on B(N).

The precision matrix of the field is ``I - P_box`` (SRW killed on leaving the
box), which the product sine modes diagonalise; a sample is
``S diag(lambda)^{-1/2} z`` with ``S`` the orthonormal type-I sine transform.
"""

from dataclasses import dataclass, replace
from functools import lru_cache
import json

import numpy as np
import scipy.linalg

from .greens import DENSE_LIMIT, dirichlet_green, sine_eigenvalues, sine_transform
from .lattice import BoxGeom, CapacityError
from .rng import generator


@dataclass(frozen=True)
class FieldSample:
    box: BoxGeom
    values: np.ndarray  # flat, box index order
    seed: int
    stream: int
    level: float = 0.0

    def __post_init__(self):
        self.values.setflags(write=False)

    def at(self, p):
        return float(self.values[self.box.index(p)])


@lru_cache(maxsize=16)
def _inv_sqrt_eigs(box):
    return 1.0 / np.sqrt(sine_eigenvalues(box))


def spectral_array(box, rng, out=None):
    """One centred field with covariance G_D as a flat float64 array."""
    z = rng.standard_normal(box.shape)
    z *= _inv_sqrt_eigs(box)
    f = sine_transform(z, tuple(range(box.dim)))
    if out is None:
        return np.ascontiguousarray(f).reshape(-1)
    out[:] = f.reshape(-1)
    return out


def sample_spectral(box, seed, stream=0):
    return FieldSample(box, spectral_array(box, generator(seed, stream)), int(seed), int(stream))


def spectral_batch(box, seed, streams):
    """Fields for several streams at once, shape (len(streams), V).

    Row ``r`` equals ``sample_spectral(box, seed, streams[r]).values`` bit-for-bit
    up to the FFT's batch-vs-single rounding (same normals, same transform)."""
    streams = list(streams)
    z = np.empty((len(streams),) + box.shape)
    for r, s in enumerate(streams):
        z[r] = generator(seed, s).standard_normal(box.shape)
    z *= _inv_sqrt_eigs(box)
    axes = tuple(range(1, box.dim + 1))
    return np.ascontiguousarray(sine_transform(z, axes)).reshape(len(streams), -1)


@lru_cache(maxsize=4)
def _dense_factor(box):
    if box.volume > DENSE_LIMIT:
        raise CapacityError(f"dense oracle sampler needs V <= {DENSE_LIMIT}, got {box.volume}")
    G = dirichlet_green(box).matrix
    return scipy.linalg.cholesky(G, lower=True)


def sample_dense_oracle(box, seed, stream=0):
    """Same law as :func:`sample_spectral` via the Cholesky factor of G_D."""
    Lc = _dense_factor(box)
    z = generator(seed, stream).standard_normal(box.volume)
    return FieldSample(box, Lc @ z, int(seed), int(stream))


def dense_batch(box, seed, streams):
    Lc = _dense_factor(box)
    z = np.stack([generator(seed, s).standard_normal(box.volume) for s in streams])
    return z @ Lc.T


def shift_level(field, h):
    """Annotate ``field`` with the level used by downstream level-set construction."""
    return replace(field, level=float(h))


def write_field_dump(path, field, edge_bits=None):
    """Debug dump: one JSON header line, then float64 values in box index order
    (then the packed edge bitset, when given)."""
    header = {"d": field.box.dim, "N": field.box.radius, "seed": field.seed,
              "stream": field.stream, "level": field.level, "dtype": "<f8",
              "count": int(field.box.volume)}
    if edge_bits is not None:
        packed = np.packbits(np.asarray(edge_bits, dtype=bool))
        header["edge_bits"] = int(len(edge_bits))
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.asarray(field.values, dtype="<f8").tobytes())
        if edge_bits is not None:
            fh.write(packed.tobytes())


def read_field_dump(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        vals = np.frombuffer(fh.read(8 * header["count"]), dtype="<f8").copy()
        bits = None
        if "edge_bits" in header:
            n = header["edge_bits"]
            bits = np.unpackbits(np.frombuffer(fh.read(), dtype=np.uint8))[:n].astype(bool)
    box = BoxGeom(header["d"], header["N"])
    return FieldSample(box, vals, header["seed"], header["stream"], header["level"]), bits
