"""Command-line front end.

Subcommands: run (single load point), sweep (lambda list), validate
(per-slot invariant audit, nonzero exit on violation), oracle (greedy vs
brute-force scheduling comparison on small random instances).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .harness import (ConfigError, RunReport, SimConfig, export,
                      run_experiment)
from .topology import (Topology, Link, conflict_sets, greedy_maximal_schedule,
                       is_conflict_free, is_maximal_pp,
                       max_weight_schedule_oracle, K_HOP)
from .util import AuditError


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--topology", help="fixture name or topology JSON path")
    p.add_argument("--algorithm", choices=["bp", "mbp", "parn", "parn-coding"])
    p.add_argument("--lam", "--lambda", dest="lam",
                   help="arrival rate, or comma-separated list for sweeps")
    p.add_argument("--slots", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--m", dest="M", type=float, help="path-length penalty M")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--router", choices=["probabilistic", "token"])
    p.add_argument("--scheduler", choices=["lwf", "oracle"])
    p.add_argument("--bucket-cap", dest="bucket_cap", type=int)
    p.add_argument("--interference-k", dest="interference_k", type=int)
    p.add_argument("--destination-mode", dest="destination_mode",
                   choices=["sampled", "static"])
    p.add_argument("--workers", type=int)
    p.add_argument("--extra-activation", dest="extra_activation",
                   action="store_true", default=None)
    p.add_argument("--no-extra-activation", dest="extra_activation",
                   action="store_false", default=None)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--no-figures", action="store_true")


def _config_from_args(args, force_audit=False) -> SimConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    for key in ("topology", "algorithm", "slots", "warmup", "seed", "M",
                "epsilon", "beta", "router", "scheduler", "bucket_cap",
                "interference_k", "destination_mode", "workers",
                "extra_activation"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    if getattr(args, "lam", None) is not None:
        base["lambda"] = [float(x) for x in str(args.lam).split(",")]
    if force_audit:
        base["audit"] = True
    return SimConfig.from_dict(base)


def _write_outputs(report: RunReport, args, run_figures=False) -> None:
    os.makedirs(args.out, exist_ok=True)
    export(report, "json", os.path.join(args.out, "report.json"))
    export(report, "csv", os.path.join(args.out, "report.csv"))
    written = [os.path.join(args.out, "report.json"),
               os.path.join(args.out, "report.csv")]
    if not args.no_figures:
        from .plots import render_run_figures, render_sweep_figures
        written += render_sweep_figures(report, args.out)
        if run_figures:
            written += render_run_figures(report, args.out)
    for path in written:
        print(f"wrote {path}")


def cmd_run(args) -> int:
    config = _config_from_args(args)
    if len(config.lam) != 1:
        config.lam = config.lam[:1]
    report = run_experiment(config)
    e = report.entries[0]
    print(f"lambda={e.lam:g} delivered={e.delivered} arrivals={e.arrivals} "
          f"mean_delay={e.mean_delay} verdict={e.verdict}")
    _write_outputs(report, args, run_figures=True)
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    report = run_experiment(config)
    for e in report.entries:
        print(f"lambda={e.lam:g} mean_delay={e.mean_delay} "
              f"throughput={e.throughput:g} verdict={e.verdict}")
    _write_outputs(report, args)
    return 0


def cmd_validate(args) -> int:
    config = _config_from_args(args, force_audit=True)
    try:
        report = run_experiment(config)
    except AuditError as err:
        print(f"INVARIANT VIOLATION: {err}", file=sys.stderr)
        return 1
    print(f"all per-slot invariants held over {config.slots} slots "
          f"x {len(config.lam)} load points")
    _write_outputs(report, args)
    return 0


def cmd_oracle(args) -> int:
    rng = np.random.Generator(np.random.PCG64(args.seed or 0))
    worst = 1.0
    for trial in range(args.trials):
        topo, model = _random_small_instance(rng, args.links)
        w = rng.random(topo.num_links) * 10 - 2
        greedy = greedy_maximal_schedule(w, model)
        oracle = max_weight_schedule_oracle(w, model, topo.capacity)
        gval = sum(topo.capacity[l] * max(w[l], 0) for l in greedy.links)
        oval = sum(topo.capacity[l] * max(w[l], 0) for l in oracle.links)
        ok = is_conflict_free(greedy, model.conflict_matrix)
        maximal = is_maximal_pp(greedy, model)
        ratio = gval / oval if oval > 0 else 1.0
        worst = min(worst, ratio)
        if not ok or not maximal or ratio < 0.5 - 1e-12:
            print(f"trial {trial}: FAILED ratio={ratio:.3f} "
                  f"conflict_free={ok} maximal={maximal}")
            return 1
    print(f"{args.trials} trials on <= {args.links}-link instances: "
          f"greedy within [{worst:.3f}, 1.0] of the brute-force optimum")
    return 0


def _random_small_instance(rng, max_links: int):
    n = int(rng.integers(4, 8))
    pairs = [(i, j) for i in range(n) for j in range(n) if i < j]
    rng.shuffle(pairs)
    links = []
    for i, j in pairs:
        if len(links) + 2 > max_links:
            break
        if rng.random() < 0.6:
            links += [Link(i, j, 1), Link(j, i, 1)]
    if not links:
        links = [Link(0, 1, 1), Link(1, 0, 1)]
    topo = Topology(n, links)
    return topo, conflict_sets(topo, K_HOP, 1)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="parnsim",
                                 description="slotted-time network simulator: "
                                             "back-pressure, shadow-queue routing, XOR coding")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single load point")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep the lambda list")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="audited run; nonzero exit on violation")
    _add_config_flags(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_or = sub.add_parser("oracle", help="greedy vs brute-force schedule check")
    p_or.add_argument("--trials", type=int, default=100)
    p_or.add_argument("--links", type=int, default=12)
    p_or.add_argument("--seed", type=int, default=0)
    p_or.set_defaults(func=cmd_oracle)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
