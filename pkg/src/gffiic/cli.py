"""Command-line experiment driver.

Every subcommand writes ``<out>/<experiment>.csv`` and a JSON manifest with
the effective configuration, timestamps and SHA-256 digests of the outputs.
A configuration file (``--config``) holds ``key = value`` lines in an
optional ``[run]`` section; command-line flags override it.

Exit codes: 0 success, 2 invalid configuration, 3 resource limits, 4 failed
self-test.
"""

import argparse
import configparser
import math
import os
import sys

import numpy as np

from . import estimators as est
from .capacity import capacity
from .gff import dense_batch, sample_spectral, spectral_batch
from .greens import dirichlet_green, free_green
from .iic import (Boundary, Capacity, Point, acceptance_rate, calibrate_capacity_pilot, default_battery,
                  equivalence_report)
from .lattice import BoxGeom, CapacityError, DomainError
from .loopsoup import (LoopSoupModel, expected_visits, occupation_field, sample_loop_soup,
                       sign_cluster_equivalence)
from .metric import bridge_hit_oracle, bridge_open_prob, open_level_set
from .percolation import Explorer, label_clusters

EXIT_CONFIG = 2
EXIT_RESOURCES = 3
EXIT_SELFTEST = 4

# flag name -> (type, default); lists are comma-separated
OPTIONS = {
    "d": (int, 3),
    "N": ("intlist", None),
    "M": ("intlist", None),
    "n": (int, None),
    "T": ("floatlist", None),
    "h": ("floatlist", [0.0]),
    "reps": (int, 1000),
    "seed": (int, 0),
    "workers": (int, 1),
    "out": (str, "."),
    "sign_N": (int, 8),
    "allow_d6": (bool, False),
}


def _parse_value(kind, text):
    if isinstance(text, (list, tuple)):
        return list(text)
    if kind == "intlist":
        return [int(v) for v in str(text).split(",") if v.strip()]
    if kind == "floatlist":
        return [float(v) for v in str(text).split(",") if v.strip()]
    if kind is bool:
        return str(text).strip().lower() in ("1", "true", "yes", "on")
    return kind(text)


def build_parser():
    p = argparse.ArgumentParser(prog="gffiic", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    names = ["selftest", "green", "two-point", "one-arm", "crossing", "volume-tail", "cond-volume",
             "cond-two-point", "cap-tail", "quasi-mult", "iic-compare", "loop-soup-check"]
    for name in names:
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--d", type=int)
        s.add_argument("--N", "--N-list", dest="N")
        s.add_argument("--M", "--M-list", dest="M")
        s.add_argument("--n", type=int)
        s.add_argument("--T", "--T-list", dest="T")
        s.add_argument("--h")
        s.add_argument("--reps", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--out")
        s.add_argument("--sign-N", dest="sign_N", type=int)
        s.add_argument("--allow-d6", dest="allow_d6", action="store_true", default=None)
    return p


def resolve_config(args):
    """Defaults < config file < flags."""
    cfg = {k: v[1] for k, v in OPTIONS.items()}
    if args.config:
        cp = configparser.ConfigParser()
        cp.optionxform = str  # N and n are different keys
        with open(args.config) as fh:
            text = fh.read()
        if not text.lstrip().startswith("["):
            text = "[run]\n" + text
        cp.read_string(text)
        section = cp["run"] if cp.has_section("run") else cp.defaults()
        for key, val in section.items():
            key = key.replace("-", "_")
            if key not in OPTIONS:
                raise DomainError(f"unknown configuration key {key!r}")
            cfg[key] = _parse_value(OPTIONS[key][0], val)
    for key, (kind, _) in OPTIONS.items():
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = _parse_value(kind, val)
    cfg["experiment"] = args.command
    if cfg["d"] < 3:
        raise DomainError("d must be at least 3")
    if cfg["d"] == 6:
        if not cfg["allow_d6"]:
            raise DomainError("d = 6 is excluded by default (no proof there); "
                              "use --allow-d6 for an exploratory run")
    if cfg["reps"] < 1 or cfg["workers"] < 1:
        raise DomainError("reps and workers must be positive")
    return cfg


def _need(cfg, key, default):
    return cfg[key] if cfg[key] is not None else default


def _fit_rows(name, param, pairs):
    pts = [(x, e) for x, e in pairs if e.mean > 0]
    if len(pts) < 3:
        return []
    return [est.fit_row(name, param, est.fit_loglog(pts))]


# ---------------------------------------------------------------- experiments

def run_green(cfg):
    d = cfg["d"]
    rows = []
    for k in [0] + _need(cfg, "N", [1, 2, 4, 8, 16]):
        x = (k,) + (0,) * (d - 1)
        rows.append(est.Row("green", "x1", k, free_green(d, x), 0.0, 0))
    return rows, {}


def _default_pairs(d):
    o = (0,) * d
    e1 = (1,) + (0,) * (d - 1)
    e2 = (2,) + (0,) * (d - 1)
    diag = (2, 2) + (0,) * (d - 2)
    return [(o, e1), (o, e2), (o, diag)]


def run_two_point(cfg):
    N = _need(cfg, "N", [8])[0]
    rows = []
    for r in est.estimate_arcsin(cfg["d"], N, _default_pairs(cfg["d"]), cfg["reps"], cfg["seed"], cfg["workers"]):
        rows.append(est.Row.of("two-point", f"{r.x}->{r.y}", N, r.estimate))
        rows.append(est.Row("two-point", f"exact:{r.x}->{r.y}", float(N), r.exact, 0.0, 0, None, None,
                            f"z={r.z!r}"))
    return rows, {}


def run_one_arm(cfg):
    rows, acc = [], {}
    for h in cfg["h"]:
        res = est.estimate_one_arm(cfg["d"], h, _need(cfg, "N", [8, 16, 32, 64]), cfg["reps"], cfg["seed"],
                                   cfg["workers"])
        rows += [est.Row.of("one-arm", f"N(h={h!r})", N, e) for N, e in res]
        rows += _fit_rows("one-arm", f"N(h={h!r})", res)
    return rows, acc


def run_crossing(cfg):
    n = _need(cfg, "n", 4)
    res = [(N, est.estimate_crossing(cfg["d"], n, N, cfg["reps"], cfg["seed"], cfg["workers"]))
           for N in _need(cfg, "N", [16, 32, 64])]
    return [est.Row.of("crossing", f"N(n={n})", N, e) for N, e in res] + _fit_rows("crossing", f"N(n={n})", res), {}


def run_volume_tail(cfg):
    R = _need(cfg, "N", [96])[0]
    vt = est.estimate_volume_tail(cfg["d"], _need(cfg, "M", [16, 64, 256, 1024]), cfg["reps"], cfg["seed"],
                                  R, cfg["workers"])
    rows = [est.Row.of("volume-tail", "M", M, e) for M, e in vt.rows] + _fit_rows("volume-tail", "M", vt.rows)
    rows.append(est.Row("volume-tail", "censored_fraction", R, vt.censored_fraction, 0.0, cfg["reps"],
                        None, None, vt.warning))
    if vt.warning:
        print("warning:", vt.warning, file=sys.stderr)
    return rows, {}


def _cond_runs(cfg):
    d = cfg["d"]
    Ms = _need(cfg, "M", [4, 8, 16])
    Ns = cfg["N"] or [4 * M for M in Ms]
    if len(Ns) == 1 and len(Ms) > 1:
        Ns = Ns * len(Ms)
    return [(M, N, est.conditioned_arm_run(d, M, N, cfg["reps"], cfg["seed"], workers=cfg["workers"]))
            for M, N in zip(Ms, Ns)]


def run_cond_volume(cfg):
    rows, acc, med = [], {}, []
    for M, N, run in _cond_runs(cfg):
        s = est.summarize_volumes(run, cfg["seed"])
        acc[f"M={M},N={N}"] = run.acceptance
        rows.append(est.Row("cond-volume", "median", M, s.median, s.median_sem, s.accepted))
        rows.append(est.Row("cond-volume", "q1", M, s.q1, math.nan, s.accepted))
        rows.append(est.Row("cond-volume", "q3", M, s.q3, math.nan, s.accepted))
        rows.append(est.Row.of("cond-volume", "P(V>=2median)", M, s.p_twice_median))
        for lam, e in s.tail.items():
            rows.append(est.Row.of("cond-volume", f"P(V>={lam}*scale)", M, e))
        med.append((M, s.median, s.median_sem))
    if len(med) >= 3:
        rows.append(est.fit_row("cond-volume", "median", est.fit_loglog(med)))
    return rows, acc


def run_cond_two_point(cfg):
    rows, acc, pts = [], {}, []
    for M, N, run in _cond_runs(cfg):
        e = est.proportion(int(run.connected[:, 0].sum()), run.accepted)
        acc[f"M={M},N={N}"] = run.acceptance
        rows.append(est.Row.of("cond-two-point", "M", M, e))
        pts.append((M, e))
    return rows + _fit_rows("cond-two-point", "M", pts), acc


def run_cap_tail(cfg):
    d = cfg["d"]
    g00 = free_green(d, (0,) * d)
    T = cfg["T"] or list(2 / g00 * np.logspace(0, 1, 5))
    R = _need(cfg, "N", [32])[0]
    ct = est.estimate_capacity_tail(d, T, cfg["reps"], cfg["seed"], R, cfg["workers"])
    rows = [est.Row.of("cap-tail", "T", t, e) for t, e in ct.rows]
    rows += [est.Row("cap-tail", "exact_metric_law", t, v, 0.0, 0) for t, v in zip(T, ct.exact)]
    rows += [est.Row("cap-tail", "asymptotic", t, v, 0.0, 0) for t, v in zip(T, ct.asymptotic)]
    return rows + _fit_rows("cap-tail", "T", ct.rows), {}


def run_quasi_mult(cfg):
    rows = []
    for r in est.quasi_mult_ratio(cfg["d"], _need(cfg, "N", [4, 8, 16]), cfg["reps"], cfg["seed"],
                                  workers=cfg["workers"]):
        rows.append(est.Row("quasi-mult", "ratio", r.N, r.ratio, r.ratio_sem, cfg["reps"]))
        rows.append(est.Row.of("quasi-mult", "P(A1<->A2)", r.N, r.p_joint))
        rows.append(est.Row.of("quasi-mult", "P(A1<->dB(N))", r.N, r.p_inner))
        rows.append(est.Row.of("quasi-mult", "P(A2<->dB(N))", r.N, r.p_outer))
    return rows, {}


def run_iic_compare(cfg):
    d = cfg["d"]
    N = _need(cfg, "N", [16])[0]
    bnd = Boundary(N)
    target = acceptance_rate(bnd, max(2000, cfg["reps"]), cfg["seed"], d=d).mean
    T = cfg["T"][0] if cfg["T"] else calibrate_capacity_pilot(target, BoxGeom(d, N), 4000, cfg["seed"])
    pnt = Point((N,) + (0,) * (d - 1), symmetric=True)
    cap = Capacity(T, N)
    rep = equivalence_report(default_battery(d), [(bnd, pnt), (bnd, cap), (pnt, cap)], cfg["reps"],
                             cfg["seed"], d)
    rows, acc = [], {}
    for label, tab in rep.tables.items():
        acc[label] = tab.acceptance.mean
        for j, (_, e) in enumerate(tab.rows):
            rows.append(est.Row.of("iic-compare", f"{label}:event{j}", N, e))
    for (a, b), zs in rep.z.items():
        for j, z in enumerate(zs):
            rows.append(est.Row("iic-compare", f"z:{a}|{b}:event{j}", N, z, 0.0, cfg["reps"], None, None,
                                "flag" if abs(z) > 3 else ""))
    return rows, acc


def run_loop_soup_check(cfg):
    d = cfg["d"]
    box = BoxGeom(d, _need(cfg, "N", [1])[0])
    K = 2
    while True:
        try:
            model = LoopSoupModel(box, K, 1e-6)
            break
        except ValueError:
            K *= 2
    n2 = np.zeros(cfg["reps"])
    visits = np.zeros((cfg["reps"], box.volume))
    for r in range(cfg["reps"]):
        s = sample_loop_soup(box, 0.5, K, cfg["seed"], r, model)
        n2[r] = sum(1 for lp in s.loops if lp.root == box.center and lp.length == 2)
        visits[r] = occupation_field(s).visits
    rows = [est.Row.of("loop-soup-check", "length2_at_origin", 0.5, est.mean_estimate(n2)),
            est.Row("loop-soup-check", "length2_exact", 0.5, 0.5 * model.q[box.center, 2] / 2, 0.0, 0)]
    ev = expected_visits(model, 0.5)
    rows.append(est.Row.of("loop-soup-check", "visits_origin", 0.5, est.mean_estimate(visits[:, box.center])))
    rows.append(est.Row("loop-soup-check", "visits_origin_exact", 0.5, float(ev[box.center]), 0.0, 0))
    sb = BoxGeom(d, cfg["sign_N"])
    rep = sign_cluster_equivalence(sb, cfg["reps"], cfg["seed"])
    rows.append(est.Row("loop-soup-check", "positive_minus_half_sign_arm", sb.radius, rep.difference,
                        rep.difference_sem, rep.reps, None, None, f"z={rep.z!r} ks_p={rep.ks_pvalue!r}"))
    return rows, {}


def run_selftest(cfg):
    """Quick oracle comparisons; returns rows and raises SystemExit(4) on failure."""
    checks = []
    g00 = free_green(3, (0, 0, 0))
    checks.append(("capacity({0}) = 1/G(0,0)", abs(capacity([(0, 0, 0)]) - 1 / g00) < 1e-12))
    box = BoxGeom(3, 1)
    G = dirichlet_green(box).matrix
    n = 20000
    for name, xs in (("spectral", spectral_batch(box, 1, range(n))), ("dense", dense_batch(box, 2, range(n)))):
        C = xs.T @ xs / n
        se = np.sqrt((G**2 + np.outer(np.diag(G), np.diag(G))) / n)
        checks.append((f"{name} sampler covariance within 5 sigma", bool(np.all(np.abs(C - G) < 5 * se))))
    o = bridge_hit_oracle(1.0, 2.0, reps=20000, seed=3)
    checks.append(("bridge formula vs discretised bridge", abs(o.mean - bridge_open_prob(1, 2)) < 4 * o.sem))
    b8 = BoxGeom(3, 4)
    ex = Explorer(b8)
    ok = True
    for s in range(10):
        f = sample_spectral(b8, 5, s)
        lab = label_clusters(open_level_set(f))
        m = ex.cluster(f.values, [b8.center], seed=5, stream=s)
        r = lab.root[b8.center]
        ok &= set(m.tolist()) == (set(np.flatnonzero(lab.root == r).tolist()) if r >= 0 else set())
    checks.append(("union-find = BFS on origin clusters", ok))
    rows = [est.Row("selftest", name, 0, float(passed), 0.0, 1) for name, passed in checks]
    for name, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return rows, {}, all(p for _, p in checks)


RUNNERS = {
    "green": run_green, "two-point": run_two_point, "one-arm": run_one_arm, "crossing": run_crossing,
    "volume-tail": run_volume_tail, "cond-volume": run_cond_volume, "cond-two-point": run_cond_two_point,
    "cap-tail": run_cap_tail, "quasi-mult": run_quasi_mult, "iic-compare": run_iic_compare,
    "loop-soup-check": run_loop_soup_check,
}


def run(cfg):
    """Dispatch, write CSV and manifest; returns (manifest dict, ok flag)."""
    os.makedirs(cfg["out"], exist_ok=True)
    started = est.now()
    ok = True
    if cfg["experiment"] == "selftest":
        rows, acc, ok = run_selftest(cfg)
    else:
        if cfg["d"] == 6:
            print("WARNING: d = 6 exploratory run; no acceptance claims apply", file=sys.stderr)
        rows, acc = RUNNERS[cfg["experiment"]](cfg)
    name = cfg["experiment"]
    csv_path = est.write_csv(os.path.join(cfg["out"], f"{name}.csv"), rows)
    man = est.write_manifest(os.path.join(cfg["out"], f"{name}.manifest.json"), cfg, [csv_path], started,
                             est.now(), acc)
    return man, ok


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (DomainError, ValueError, OSError, configparser.Error) as exc:
        print(f"gffiic: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _, ok = run(cfg)
    except (CapacityError, MemoryError) as exc:
        print(f"gffiic: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCES
    except DomainError as exc:
        print(f"gffiic: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0 if ok else EXIT_SELFTEST


if __name__ == "__main__":
    sys.exit(main())
