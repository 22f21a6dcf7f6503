"""Command-line driver: batch experiments with machine-readable reports.

Subcommands: hyperbolic | bundles | conjugacy | sweep | zoo-list. Every run
is deterministic given the config and seed; exit codes are 0 success,
1 config error, 2 check failure, 3 divergence, 4 condition failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import zoo
from .bundles import verify_principal
from .errors import (ConfigError, DivergenceError, InvstabError,
                     WraparoundError)
from .hyperbolic import (build_filtration, build_splitting,
                         check_piece_isolation, spectral_decomposition,
                         verify_axiom_A)
from .pipeline import prepare, run_conjugacy
from .reporting import (ExperimentConfig, field_rows, residual_rows,
                        section_rows, write_csv, write_report)
from .sampling import build_orbit_sample

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK = 2
EXIT_DIVERGED = 3
EXIT_CONDITIONS = 4


def _load_config(args):
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    overrides = {k: v for k, v in vars(args).items()
                 if k in ExperimentConfig.__dataclass_fields__ and v is not None}
    if overrides:
        merged = cfg.to_dict()
        merged.update({k: str(v) if k in ("delta", "shift_range") else v
                       for k, v in overrides.items()})
        cfg = ExperimentConfig.from_dict(
            {k: str(v) for k, v in merged.items()}, source="<cli>")
    return cfg


def cmd_zoo_list(args):
    for name, desc in zoo.zoo_names():
        print(f"{name:28s} {desc}")
    return EXIT_OK


def cmd_hyperbolic(args):
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    system = zoo.parse_system(cfg.system)
    pieces = spectral_decomposition(system)
    splitting = build_splitting(system, pieces.pieces)
    report = verify_axiom_A(system, splitting)
    payload = {
        "system": system.name,
        "axiom_a": report.to_dict(),
        "pieces": [p.name for p in pieces.pieces],
        "order_edges": [list(e) for e in pieces.order_edges],
    }
    if pieces.filtration:
        build_filtration(pieces)
        sample = build_orbit_sample(system, cfg.n_orbits, 44, cfg.k_b, cfg.k_f,
                                    cfg.seed)
        payload["piece_isolation_drift"] = check_piece_isolation(pieces, sample)
    write_report(out / "axiom_a_report.json", payload, cfg)
    rows = []
    for idx, win in enumerate(splitting.windows):
        su = splitting.unstable[idx]
        ss = splitting.stable[idx]
        rows.append([idx] + [float(v) for v in win.point(0)]
                    + [ss.dim, su.dim]
                    + [float(v) for v in su.basis.ravel(order="F")])
    write_csv(out / "splitting.csv",
              ["window", *(f"x{i}" for i in range(system.space.dim)),
               "stable_dim", "unstable_dim", "unstable_basis..."], rows)
    print(f"axiom A: contraction={report.contraction:.4g} "
          f"expansion={report.expansion:.4g} passed={report.passed}")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_bundles(args):
    cfg = _load_config(args)
    if cfg.delta_value != "auto" and cfg.delta_value <= 0:
        print("error: inverse undefined at delta=0", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    system = zoo.parse_system(cfg.system)
    delta = 0.01 if cfg.delta_value == "auto" else cfg.delta_value
    prep = prepare(system, delta, n_orbits=cfg.n_orbits,
                   S=cfg.shift_range_value, k_b=cfg.k_b, k_f=cfg.k_f,
                   seed=cfg.seed, truncation_tol=cfg.truncation_tol,
                   mc_samples=cfg.mc_samples)
    report = verify_principal(prep.family)
    payload = {"system": system.name, "delta": delta, "principal": report}
    write_report(out / "principal_report.json", payload, cfg)
    for i in range(prep.family.q):
        for tag, fld in (("stable", prep.family.stable[i]),
                         ("unstable", prep.family.unstable[i])):
            if fld.dim == 0:
                continue
            write_csv(out / f"field_{tag}_{i}.csv",
                      ["orbit", "column", "basis..."], field_rows(fld))
    print(f"principal report: passed={report['passed']} "
          f"K={report['constants']['K']:.4g}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_conjugacy(args):
    cfg = _load_config(args)
    out = Path(cfg.output_dir)
    system = zoo.parse_system(cfg.system)
    family, eps = zoo.parse_perturbation(system, cfg.perturbation)
    g = family(eps)
    try:
        w, report, prep = run_conjugacy(
            system, g, delta=cfg.delta_value, eta=cfg.eta, eta_lip=cfg.eta_lip,
            truncation_tol=cfg.truncation_tol, max_iters=cfg.max_iters,
            stop_tol=cfg.stop_tol, n_orbits=cfg.n_orbits,
            S=cfg.shift_range_value, k_b=cfg.k_b, k_f=cfg.k_f, seed=cfg.seed,
            mc_samples=cfg.mc_samples)
    except (DivergenceError, WraparoundError) as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    payload = {"system": system.name, "perturbation": cfg.perturbation,
               "solve": report.to_dict()}
    write_report(out / "solve_report.json", payload, cfg)
    write_csv(out / "section_w.csv",
              ["orbit", "column", "w..."], section_rows(w))
    write_csv(out / "residuals.csv", ["iteration", "residual"],
              residual_rows(report.residuals))
    if prep.piece_set.q > 1:
        S = prep.sample.S
        q, n, c = prep.gammas.shape
        write_csv(out / "partition.csv",
                  ["orbit", "column", *(f"gamma{i}" for i in range(q))],
                  ([i, j - S] + [float(prep.gammas[k, i, j]) for k in range(q)]
                   for i in range(n) for j in range(c)))
    conditions = (report.c1_defect <= 10 * max(report.residuals[-1], cfg.stop_tol)
                  and report.c2_value <= cfg.eta
                  and report.injectivity_pass)
    print(f"conjugacy: converged={report.converged} "
          f"c1_defect={report.c1_defect:.3g} |w|={report.c2_value:.3g} "
          f"Lambda(w)={report.c3_value:.3g}")
    if not report.converged:
        return EXIT_DIVERGED
    return EXIT_OK if conditions else EXIT_CONDITIONS


def cmd_sweep(args):
    cfg = _load_config(args)
    values = [v for v in args.values.split(",") if v]
    if not values:
        print("error: empty sweep grid", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    base = cfg.to_dict()

    def one(val):
        d = dict(base)
        d[args.param] = val
        d["output_dir"] = str(Path(base["output_dir"]) / f"{args.param}={val}")
        sub = ExperimentConfig.from_dict({k: str(v) for k, v in d.items()},
                                         source="<sweep>")
        row = {"value": val, "status": "ok"}
        try:
            system = zoo.parse_system(sub.system)
            if args.mode == "bundles":
                delta = 0.01 if sub.delta_value == "auto" else sub.delta_value
                prep = prepare(system, delta, n_orbits=sub.n_orbits,
                               S=sub.shift_range_value, k_b=sub.k_b,
                               k_f=sub.k_f, seed=sub.seed,
                               truncation_tol=sub.truncation_tol,
                               mc_samples=sub.mc_samples)
                rep = verify_principal(prep.family)
                row.update(K=rep["constants"]["K"],
                           lam=rep["constants"]["lambda_near"],
                           min_angle=rep["constants"]["min_angle"],
                           passed=rep["passed"])
            else:
                fam, eps = zoo.parse_perturbation(system, sub.perturbation)
                w, rep, _ = run_conjugacy(
                    system, fam(eps), delta=sub.delta_value, eta=sub.eta,
                    eta_lip=sub.eta_lip, truncation_tol=sub.truncation_tol,
                    max_iters=sub.max_iters, stop_tol=sub.stop_tol,
                    n_orbits=sub.n_orbits, S=sub.shift_range_value,
                    k_b=sub.k_b, k_f=sub.k_f, seed=sub.seed,
                    mc_samples=sub.mc_samples)
                row.update(converged=rep.converged, c1_defect=rep.c1_defect,
                           c2=rep.c2_value, c3=rep.c3_value,
                           contraction=rep.contraction_factor,
                           K=np.nan, lam=rep.envelope_lam)
        except InvstabError as err:
            row.update(status=f"failed: {err}")
        return row

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        rows = list(pool.map(one, values))
    keys = sorted({k for r in rows for k in r})
    write_csv(out / "sweep.csv", keys,
              [[r.get(k, "") for k in keys] for r in rows])
    n_ok = sum(r["status"] == "ok" for r in rows)
    print(f"sweep: {n_ok}/{len(rows)} runs succeeded")
    return EXIT_OK if n_ok >= 1 else EXIT_CONFIG


def build_parser():
    parser = argparse.ArgumentParser(
        prog="invstab",
        description="inverse-limit conjugacy experiments on hyperbolic "
                    "endomorphisms")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value experiment file")
        p.add_argument("--system", help="zoo member name")
        p.add_argument("--perturbation", help="e.g. translation:0.01")
        p.add_argument("--delta", help="smoothing parameter or 'auto'")
        p.add_argument("--eta", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--n-orbits", dest="n_orbits", type=int)
        p.add_argument("--truncation-tol", dest="truncation_tol", type=float)
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--jobs", type=int)

    for name, fn in (("hyperbolic", cmd_hyperbolic), ("bundles", cmd_bundles),
                     ("conjugacy", cmd_conjugacy)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("sweep")
    common(p)
    p.add_argument("--mode", choices=("bundles", "conjugacy"),
                   default="bundles")
    p.add_argument("--param", default="delta")
    p.add_argument("--values", default="")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("zoo-list")
    p.set_defaults(func=cmd_zoo_list)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
