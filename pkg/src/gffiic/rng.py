"""Random number addressing.

Every replicate of every experiment is addressed by a pair ``(seed, stream)``.
Gaussian draws come from a PCG64 generator built from
``SeedSequence(seed, spawn_key=(stream,))``; per-edge uniforms come from a
counter-based hash of ``(seed, stream, edge_id)`` so that any edge can be
evaluated independently of visiting order, in numpy or inside numba kernels.
"""

import hashlib

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# separates the edge-hash family from other hashed quantities
EDGE_DOMAIN = 0x6564676573
LOOP_DOMAIN = 0x6C6F6F7073


def generator(seed, stream=0):
    """numpy Generator for replicate ``stream`` of experiment ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_key(seed, stream, domain=EDGE_DOMAIN):
    """64-bit key for the uniform family of ``(seed, stream)``."""
    with np.errstate(over="ignore"):
        k = mix64(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        k = mix64(k ^ (np.uint64(int(stream) & 0xFFFFFFFFFFFFFFFF) * _M1 + np.uint64(domain)))
    return np.uint64(k)


@njit(cache=True)
def uniform_at(key, counter):
    """Uniform in [0, 1) at position ``counter`` of the family ``key``."""
    z = mix64(key + np.uint64(counter) * _GOLDEN)
    return float(z >> _S11) * _INV53


def uniforms(key, counters):
    """Vectorised :func:`uniform_at`; bit-identical to the kernel version."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) + c * _GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        z = z ^ (z >> _S31)
    return (z >> _S11).astype(np.float64) * _INV53


def _label(x):
    if isinstance(x, str):
        return int.from_bytes(hashlib.blake2b(x.encode(), digest_size=8).digest(), "little")
    return int(x)


def derive_seed(seed, *labels):
    """Child seed for a named sub-experiment (stable across runs); labels are ints or strings."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label(x) for x in labels))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
