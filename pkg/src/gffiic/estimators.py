"""Replicated Monte Carlo estimators for the critical level-set laws.

Replicate ``r`` of an experiment always uses the field stream ``r`` of a seed
derived from the experiment name and its geometry, so results do not depend
on how replicates are split across workers.  Counts are reduced exactly and
real-valued outputs are gathered in replicate order.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import csv
import datetime as _dt
import hashlib
import json
import math
import os

import numpy as np

from . import __version__
from .capacity import (capacity_tail_asymptotic, capacity_tail_exact, cluster_capacity, equilibrium,
                       outer_layer)
from .gff import sample_spectral, spectral_batch
from .greens import arcsin_two_point, dirichlet_green, free_green
from .lattice import Annulus, BoxGeom, DomainError
from .percolation import Explorer
from .rng import derive_seed, hash_key
from .stats import Estimate, fit_loglog, mean_estimate, proportion

MIN_ACCEPTANCE = 1e-4


# ------------------------------------------------------------------ plumbing

def _chunks(reps, workers):
    k = max(1, min(int(workers), reps))
    edges = np.linspace(0, reps, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_replicates(fn, args, reps, workers=1):
    """Call ``fn(*args, lo, hi)`` on contiguous replicate ranges and return the
    per-range results in range order.  ``workers > 1`` uses a process pool."""
    parts = _chunks(reps, workers)
    if workers <= 1 or len(parts) == 1:
        return [fn(*args, lo, hi) for lo, hi in parts]
    with ProcessPoolExecutor(max_workers=len(parts)) as pool:
        futs = [pool.submit(fn, *args, lo, hi) for lo, hi in parts]
        return [f.result() for f in futs]


def _cat(results):
    return np.concatenate(results) if results else np.empty(0)


@dataclass(frozen=True)
class Row:
    """One CSV row: a parameter point and its estimate."""

    experiment: str
    param: str
    value: float
    estimate: float
    sem: float
    n: int
    successes: int = None
    upper95: float = None
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))

    @classmethod
    def of(cls, experiment, param, value, est):
        return cls(experiment, param, float(value), est.mean, est.sem, est.n, est.successes,
                   est.upper95, est.note)


def fit_row(experiment, param, fit):
    return Row(experiment, "slope_fit:" + param, math.nan, fit.slope, fit.slope_stderr, len(fit.points),
               None, None, f"intercept={fit.intercept!r} r2={fit.r_squared!r}")


CSV_FIELDS = [f for f in Row.__dataclass_fields__]


def write_csv(path, rows):
    """Header row plus full-precision numbers (repr round-trips doubles)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                        for v in (getattr(r, f) for f in CSV_FIELDS)])
    os.replace(tmp, path)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, config, outputs, started, finished, acceptance=None, extra=None):
    doc = {
        "config": config,
        "software_version": __version__,
        "started": started,
        "finished": finished,
        "acceptance_rates": acceptance or {},
        "outputs": {os.path.basename(p): sha256_file(p) for p in outputs},
    }
    if extra:
        doc.update(extra)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
    os.replace(tmp, path)
    return doc


def now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def check_dimension(d, allow_d6=False):
    if d < 3:
        raise DomainError("dimension must be at least 3")
    if d == 6 and not allow_d6:
        raise DomainError("d = 6 is excluded (no proof of the exponents there); "
                          "pass the explicit override for exploratory runs")


# ------------------------------------------------------------------ one arm

def _arm_radii(d, N, h, seed, lo, hi):
    """Sup-norm radius of the origin's cluster (-1 when the origin is inactive)."""
    box = BoxGeom(d, N)
    ex = Explorer(box)
    out = np.empty(hi - lo, dtype=np.int64)
    for i, r in enumerate(range(lo, hi)):
        f = sample_spectral(box, seed, r)
        m = ex.cluster(f.values, [box.center], h=h, key=hash_key(seed, r))
        out[i] = box.sup_norm[m].max() if len(m) else -1
    return out


def one_arm_seed(seed, d, N, h=0.0):
    return derive_seed(seed, "one-arm", d, N, repr(float(h)))


def estimate_one_arm(d, h, N_list, reps, seed, workers=1):
    """theta(N) = P(0 <->_{>= h} boundary of B(N)), sampled on a box of radius N.

    Returns a list of (N, Estimate); zero counts carry a one-sided bound."""
    check_dimension(d, allow_d6=True)
    out = []
    reps_list = reps if isinstance(reps, (list, tuple)) else [reps] * len(N_list)
    for N, n_rep in zip(N_list, reps_list):
        if N < 1:
            raise DomainError("N must be positive")
        s = one_arm_seed(seed, d, N, h)
        r = _cat(run_replicates(_arm_radii, (d, N, float(h), s), n_rep, workers))
        out.append((N, proportion(int(np.count_nonzero(r >= N)), n_rep, f"box radius {N}")))
    return out


# ------------------------------------------------------------------ crossing

def _crossing_hits(d, n, N, seed, lo, hi):
    box = BoxGeom(d, N)
    ex = Explorer(box)
    inner = np.flatnonzero(box.sup_norm <= n)
    out = np.zeros(hi - lo, dtype=bool)
    for i, r in enumerate(range(lo, hi)):
        f = sample_spectral(box, seed, r)
        m = ex.cluster(f.values, inner, key=hash_key(seed, r))
        out[i] = len(m) > 0 and box.sup_norm[m].max() >= N
    return out


def estimate_crossing(d, n, N, reps, seed, workers=1):
    """rho(n, N): some cluster meets B(n) and the inner boundary of B(N), box radius N."""
    Annulus(n, N)
    check_dimension(d, allow_d6=True)
    s = derive_seed(seed, "crossing", d, n, N)
    hits = _cat(run_replicates(_crossing_hits, (d, n, N, s), reps, workers))
    return proportion(int(hits.sum()), reps, f"box radius {N}")


# ------------------------------------------------------------------ volume tail

def _volumes(d, R, seed, lo, hi):
    box = BoxGeom(d, R)
    ex = Explorer(box)
    vol = np.zeros(hi - lo, dtype=np.int64)
    cens = np.zeros(hi - lo, dtype=bool)
    for i, r in enumerate(range(lo, hi)):
        f = sample_spectral(box, seed, r)
        m = ex.cluster(f.values, [box.center], key=hash_key(seed, r))
        vol[i] = len(m)
        cens[i] = len(m) > 0 and box.sup_norm[m].max() >= R
    return np.stack([vol, cens.astype(np.int64)], axis=1)


@dataclass(frozen=True)
class VolumeTail:
    rows: list  # (M, Estimate)
    censored_fraction: float  # clusters touching the killed shell
    censored_below_max: float  # touching the shell with volume below max(M)
    warning: str = ""


def estimate_volume_tail(d, M_list, reps, seed, box_radius=96, workers=1, max_censored=0.05):
    """nu(M) = P(|C(0)| >= M) from the origin's cluster on a box of radius ``box_radius``.

    A cluster touching the killed shell is right-censored; it still counts
    as a success for every M at or below its observed volume.  Clusters
    censored with volume below max(M) are the ones whose indicator could be
    wrong, and their fraction is reported with a warning above ``max_censored``."""
    check_dimension(d, allow_d6=True)
    s = derive_seed(seed, "volume", d, box_radius)
    res = np.concatenate(run_replicates(_volumes, (d, box_radius, s), reps, workers))
    vol, cens = res[:, 0], res[:, 1].astype(bool)
    rows = [(M, proportion(int(np.count_nonzero(vol >= M)), reps)) for M in M_list]
    below = float(np.mean(cens & (vol < max(M_list))))
    frac = float(cens.mean())
    warn = f"censoring fraction {frac:.3f} exceeds {max_censored}" if frac > max_censored else ""
    return VolumeTail(rows, frac, below, warn)


# ------------------------------------------------------------------ conditioned on an arm

def _conditioned_arm(d, M, N, ys, seed, lo, hi):
    """Per attempt: accepted flag, V_M = |C(0) cap B(M)|, and 0 <-> y indicators."""
    box = BoxGeom(d, N)
    ex = Explorer(box)
    yi = np.array([box.index(y) for y in ys], dtype=np.int64)
    out = np.zeros((hi - lo, 2 + len(ys)), dtype=np.int64)
    mark = np.zeros(box.volume, dtype=bool)
    for i, r in enumerate(range(lo, hi)):
        f = sample_spectral(box, seed, r)
        m = ex.cluster(f.values, [box.center], key=hash_key(seed, r))
        if len(m) == 0 or box.sup_norm[m].max() < N:
            continue
        out[i, 0] = 1
        out[i, 1] = np.count_nonzero(box.sup_norm[m] <= M)
        mark[m] = True
        out[i, 2:] = mark[yi]
        mark[m] = False
    return out


@dataclass(frozen=True)
class ConditionedArmRun:
    d: int
    M: int
    N: int
    attempts: int
    accepted: int
    volumes: np.ndarray  # V_M per accepted sample
    connected: np.ndarray  # (accepted, len(ys)) booleans
    ys: tuple

    @property
    def acceptance(self):
        return self.accepted / self.attempts


_ARM_RUNS = {}


def conditioned_arm_run(d, M, N, reps, seed, ys=None, workers=1):
    """Rejection samples of the origin's cluster given 0 <-> boundary of B(N), box radius N.

    Runs are memoised on their arguments so the volume and two-point
    estimators can share one set of samples."""
    if N < 4 * M:
        raise DomainError("conditioning needs N >= 4M")
    ys = tuple(tuple(int(c) for c in y) for y in (ys or [(M,) + (0,) * (d - 1)]))
    key = (d, M, N, reps, seed, ys)
    if key in _ARM_RUNS:
        return _ARM_RUNS[key]
    s = one_arm_seed(seed, d, N)
    res = np.concatenate(run_replicates(_conditioned_arm, (d, M, N, ys, s), reps, workers))
    acc = res[:, 0] == 1
    run = ConditionedArmRun(d, M, N, reps, int(acc.sum()), res[acc, 1], res[acc, 2:].astype(bool), ys)
    if run.accepted == 0 or run.acceptance < MIN_ACCEPTANCE:
        raise RuntimeError(f"conditioning acceptance {run.accepted}/{reps} below {MIN_ACCEPTANCE:g}; "
                           f"increase reps or decrease N")
    _ARM_RUNS[key] = run
    return run


@dataclass(frozen=True)
class VolumeSummary:
    M: int
    N: int
    accepted: int
    attempts: int
    median: float
    median_sem: float  # bootstrap
    q1: float
    q3: float
    scale: float  # M^{(d/2+1) ^ 4}
    tail: dict  # lambda -> P(V >= lambda*scale)
    p_twice_median: Estimate

    @property
    def iqr_ratio(self):
        return self.q3 / self.q1 if self.q1 > 0 else math.inf


def summarize_volumes(run, seed=0, boot=400):
    v = run.volumes.astype(np.float64)
    med = float(np.median(v))
    rng = np.random.default_rng(derive_seed(seed, "bootstrap", run.M))
    bs = np.median(v[rng.integers(0, len(v), size=(boot, len(v)))], axis=1)
    scale = run.M ** min(run.d / 2 + 1, 4)
    tail = {lam: proportion(int(np.count_nonzero(v >= lam * scale)), len(v)) for lam in (1, 2, 4)}
    twice = proportion(int(np.count_nonzero(v >= 2 * med)), len(v))
    return VolumeSummary(run.M, run.N, run.accepted, run.attempts, med, float(bs.std(ddof=1)),
                         float(np.quantile(v, 0.25)), float(np.quantile(v, 0.75)), scale, tail, twice)


def estimate_conditional_volume(d, M, N, reps, seed, workers=1):
    """Law of V_M = |C(0) cap B(M)| given 0 <-> boundary of B(N) (``reps`` attempts)."""
    if M == 0:
        # B(0) = {0} and the conditioning forces the origin into the cluster
        return VolumeSummary(0, N, reps, reps, 1.0, 0.0, 1.0, 1.0, 1.0, {}, proportion(0, max(reps, 1)))
    return summarize_volumes(conditioned_arm_run(d, M, N, reps, seed, workers=workers), seed)


def estimate_conditional_two_point(d, M, y, N, reps, seed, workers=1):
    """P(0 <-> y | 0 <-> boundary of B(N)); y must lie on the boundary of B(M) or be 0."""
    y = tuple(int(c) for c in y)
    if not any(y):
        return proportion(reps, reps, "y = 0")
    if max(abs(c) for c in y) != M:
        raise DomainError("y must lie on the inner boundary of B(M)")
    run = conditioned_arm_run(d, M, N, reps, seed, ys=[y], workers=workers)
    return proportion(int(run.connected[:, 0].sum()), run.accepted)


# ------------------------------------------------------------------ arcsin

@dataclass(frozen=True)
class ArcsinRow:
    x: tuple
    y: tuple
    estimate: Estimate
    exact: float
    z: float


def _pair_hits(d, N, pairs, seed, lo, hi, batch=256):
    box = BoxGeom(d, N)
    ex = Explorer(box)
    xi = [box.index(x) for x, _ in pairs]
    yi = [box.index(y) for _, y in pairs]
    out = np.zeros((hi - lo, len(pairs)), dtype=bool)
    for b0 in range(lo, hi, batch):
        streams = range(b0, min(hi, b0 + batch))
        fields = spectral_batch(box, seed, streams)
        for k, r in enumerate(streams):
            phi = fields[k]
            key = hash_key(seed, r)
            for j in range(len(pairs)):
                if phi[xi[j]] < 0 or phi[yi[j]] < 0:
                    continue
                if xi[j] == yi[j]:
                    out[r - lo, j] = True
                    continue
                m = ex.cluster(phi, [xi[j]], key=key)
                out[r - lo, j] = bool(np.any(m == yi[j]))
    return out


def estimate_arcsin(d, N, pairs, reps, seed, workers=1):
    """P(x <-> y) against arcsin(G_D(x,y)/sqrt(G_D(x,x)G_D(y,y)))/pi, box radius N."""
    box = BoxGeom(d, N)
    pairs = [(tuple(x), tuple(y)) for x, y in pairs]
    for x, y in pairs:
        if not (box.contains(x) and box.contains(y)):
            raise DomainError("pair outside box")
    G = dirichlet_green(box)
    s = derive_seed(seed, "arcsin", d, N)
    hits = np.concatenate(run_replicates(_pair_hits, (d, N, pairs, s), reps, workers))
    rows = []
    for j, (x, y) in enumerate(pairs):
        est = proportion(int(hits[:, j].sum()), reps)
        exact = arcsin_two_point(G(x, y), G(x, x), G(y, y))
        rows.append(ArcsinRow(x, y, est, exact, est.z_against(exact) if est.sem > 0 else 0.0))
    return rows


# ------------------------------------------------------------------ quasi-multiplicativity

def _qm_events(d, N, factor, seed, lo, hi):
    R = factor * N
    box = BoxGeom(d, R)
    ex = Explorer(box)
    inner = np.flatnonzero(box.sup_norm <= N)
    out = np.zeros((hi - lo, 3), dtype=bool)
    for i, r in enumerate(range(lo, hi)):
        f = sample_spectral(box, seed, r)
        key = hash_key(seed, r)
        m = ex.cluster(f.values, [box.center], key=key)
        rad = box.sup_norm[m].max() if len(m) else -1
        out[i, 0] = rad >= R  # A1 <-> A2
        out[i, 1] = rad >= N  # A1 <-> boundary B(N)
        if out[i, 0]:
            out[i, 2] = True
        else:
            mm = ex.cluster(f.values, inner, key=key)
            out[i, 2] = len(mm) > 0 and box.sup_norm[mm].max() >= R  # A2 <-> boundary B(N)
    return out


@dataclass(frozen=True)
class QuasiMultRow:
    N: int
    p_joint: Estimate
    p_inner: Estimate
    p_outer: Estimate
    correction: float
    ratio: float
    ratio_sem: float


def quasi_mult_ratio(d, N_list, reps, seed, factor=8, workers=1):
    """P(A1 <-> A2) / [N^{0 ^ (6-d)} P(A1 <-> dB(N)) P(A2 <-> dB(N))], A1 = {0}, A2 = dB(factor*N).

    All three events are read off the same field on a box of radius factor*N;
    the ratio's error uses their joint per-replicate covariance."""
    if factor <= 1:
        raise DomainError("A2 must lie strictly outside B(N)")
    rows = []
    for N in N_list:
        s = derive_seed(seed, "quasi-mult", d, N, factor)
        ev = np.concatenate(run_replicates(_qm_events, (d, N, factor, s), reps, workers)).astype(float)
        p = ev.mean(axis=0)
        corr = float(N) ** min(0, 6 - d)
        ests = [proportion(int(ev[:, j].sum()), reps) for j in range(3)]
        if np.any(p == 0):
            rows.append(QuasiMultRow(N, *ests, corr, math.nan, math.nan))
            continue
        ratio = p[0] / (corr * p[1] * p[2])
        grad = np.array([1 / p[0], -1 / p[1], -1 / p[2]])
        cov = np.cov(ev, rowvar=False) / reps
        sem = ratio * math.sqrt(max(grad @ cov @ grad, 0.0))
        rows.append(QuasiMultRow(N, *ests, corr, float(ratio), float(sem)))
    return rows


# ------------------------------------------------------------------ capacity tail

SUBSET_PROBE = 1500


def _capacities(d, R, t_min, t_max, seed, lo, hi):
    """cap(C(0)) per replicate, 0 for an inactive origin.

    cap(C) <= |C|/G(0,0) skips clusters that cannot reach t_min; for clusters
    with a large outer layer, a random subset of it is solved first and, by
    monotonicity, a subset capacity above t_max settles every indicator."""
    box = BoxGeom(d, R)
    ex = Explorer(box)
    g00 = free_green(d, (0,) * d)
    out = np.zeros(hi - lo)
    for i, r in enumerate(range(lo, hi)):
        f = sample_spectral(box, seed, r)
        m = ex.cluster(f.values, [box.center], key=hash_key(seed, r))
        if len(m) == 0:
            continue
        if len(m) / g00 < t_min:
            out[i] = 1.0 / g00 if len(m) == 1 else len(m) / g00  # an upper bound below t_min
            continue
        pts = box.coords[m].astype(np.int64)
        layer = pts[outer_layer(pts)]
        if len(layer) > SUBSET_PROBE:
            sub = layer[np.random.default_rng(r).choice(len(layer), SUBSET_PROBE, replace=False)]
            low = equilibrium(sub).total
            if low >= t_max:
                out[i] = low
                continue
        out[i], _ = cluster_capacity(pts, reps=20000, seed=r)
    return out


@dataclass(frozen=True)
class CapacityTail:
    g00: float
    rows: list  # (T, Estimate)
    exact: list  # metric-graph law P(cap >= T)
    asymptotic: list  # (pi sqrt(G00))^-1 T^-1/2
    boundary_fraction: float


def estimate_capacity_tail(d, T_list, reps, seed, box_radius=32, workers=1):
    """P(cap(C(0)) >= T) for the vertex set of the origin's cluster on a box of radius ``box_radius``."""
    g00 = free_green(d, (0,) * d)
    s = derive_seed(seed, "capacity-tail", d, box_radius)
    caps = _cat(run_replicates(_capacities, (d, box_radius, min(T_list), max(T_list), s), reps, workers))
    rows = [(T, proportion(int(np.count_nonzero(caps >= T * (1 - 1e-12))), reps)) for T in T_list]
    return CapacityTail(g00, rows, [float(capacity_tail_exact(T, g00)) for T in T_list],
                        [float(capacity_tail_asymptotic(T, g00)) for T in T_list], math.nan)


__all__ = [
    "CapacityTail", "estimate_capacity_tail",
    "ArcsinRow", "ConditionedArmRun", "QuasiMultRow", "Row", "VolumeSummary", "VolumeTail",
    "conditioned_arm_run", "estimate_arcsin", "estimate_conditional_two_point",
    "estimate_conditional_volume", "estimate_crossing", "estimate_one_arm", "estimate_volume_tail",
    "fit_loglog", "fit_row", "mean_estimate", "quasi_mult_ratio", "read_csv", "run_replicates",
    "sha256_file", "summarize_volumes", "write_csv", "write_manifest",
]
