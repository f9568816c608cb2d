"""Command-line entry point: solve, simulate, verify, bench.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 round-limit
interrupt (the anytime result is still written).  Set KSCOAL_LOG to debug,
info, or warning to control verbosity.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import engine, instances, oracle
from .core import mean_utility
from .engine import EngineConfig, FixedAssignment, GreedyMarginal, PreviousSolution, UniformK
from .instances import InstanceParseError
from .netsim import NetConfig, NetworkSim, Topology
from .worldsim import ScenarioConfig, run_scenario

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_INPUT = 2
EXIT_INTERRUPTED = 3

log = logging.getLogger("kscoal")


def _setup_logging() -> None:
    level = os.environ.get("KSCOAL_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _warm_policy(spec: str, s, k_spec: str):
    if spec == "idle":
        inner = PreviousSolution()
    elif spec == "previous":
        inner = PreviousSolution()
    elif spec == "greedy":
        inner = GreedyMarginal()
    elif spec.startswith("fixed:"):
        inner = FixedAssignment(instances.parse_assignment_spec(spec[6:], s))
    else:
        raise InstanceParseError(f"unknown warm policy {spec!r}")
    if k_spec == "structure":
        return inner
    if k_spec.startswith("uniform:"):
        return UniformK(int(k_spec.split(":")[1]), inner=inner)
    raise InstanceParseError(f"unknown k policy {k_spec!r}")


def cmd_solve(args) -> int:
    try:
        s = instances.load_structure(args.instance)
        warm = _warm_policy(args.warm, s, args.k)
    except InstanceParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    cfg = EngineConfig(max_rounds=args.rounds)
    assignment, stats = engine.run_to_convergence(s, None, cfg, warm)
    out = {
        "assignment": instances.assignment_to_dict(assignment, s),
        "utility": stats.final_utility,
        "stats": stats.to_dict(),
    }
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK if stats.converged else EXIT_INTERRUPTED


def cmd_simulate(args) -> int:
    try:
        cfg_dict = json.loads(Path(args.scenario).read_text())
        cfg = ScenarioConfig.from_dict(cfg_dict)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"error: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        cfg.seed = args.seed
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary, records, traj = run_scenario(
        cfg, coordinate=not args.no_coordination, trace=args.trace
    )
    with open(outdir / "steps.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.trace:
        with open(outdir / "trace.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["time", "robot", "team", "x", "y", "theta", "status"]
            )
            writer.writeheader()
            writer.writerows(traj)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _verify_one(s, name: str, golden: dict | None) -> tuple[bool, str]:
    """Run the engine on one instance and check it against the oracle."""
    try:
        assignment, stats = engine.run_to_convergence(s)
    except Exception as exc:  # a crash is a failure, not an abort
        return False, f"{name}: engine error: {exc}"
    if not stats.converged:
        return False, f"{name}: no consensus within {stats.rounds_to_converge} rounds"
    for a_prev, a_next in zip(stats.agent_trace, stats.agent_trace[1:]):
        if any(n < p for p, n in zip(a_prev, a_next)):
            return False, f"{name}: agent utility decreased"
    try:
        report = oracle.is_kss(assignment, s)
    except oracle.InstanceTooLargeError:
        return True, f"{name}: SKIP (too large for the oracle)"
    if not report.is_kss:
        return False, f"{name}: engine result not stable, witness {report.witness}"
    if golden is not None:
        stored = golden.get("optimal_utility")
        if stored is not None and abs(stored - report.optimal_utility) > 1e-9:
            return False, f"{name}: oracle report mismatch ({stored} vs {report.optimal_utility})"
    return True, f"{name}: ok (utility {stats.final_utility:.6f}, rounds {stats.rounds_to_converge})"


def cmd_verify(args) -> int:
    jobs: list[tuple[str, object, dict | None]] = []
    if args.instances:
        root = Path(args.instances)
        files = sorted(p for p in root.glob("*.json") if not p.name.endswith(".oracle.json"))
        if not files:
            print(f"error: no instances in {root}", file=sys.stderr)
            return EXIT_INPUT
        for p in files:
            try:
                s = instances.load_structure(str(p))
            except InstanceParseError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_INPUT
            golden_path = p.with_suffix(".oracle.json")
            golden = json.loads(golden_path.read_text()) if golden_path.exists() else None
            jobs.append((p.name, s, golden))
    else:
        rng = np.random.default_rng(args.seed)
        for idx in range(args.random):
            n = int(rng.integers(2, args.max_robots + 1))
            m = int(rng.integers(1, args.max_tasks + 1))
            s = instances.random_table_instance(n, m, seed=int(rng.integers(0, 2**31)))
            jobs.append((f"random-{idx:04d}", s, None))
    emit_dir = Path(args.emit_fixtures) if args.emit_fixtures else None
    if emit_dir:
        emit_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for name, s, golden in jobs:
        ok, line = _verify_one(s, name, golden)
        print(("PASS " if ok else "FAIL ") + line)
        if not ok:
            failures += 1
        if emit_dir:
            stem = name.replace(".json", "")
            instances.save_structure(s, str(emit_dir / f"{stem}.json"))
            opt, _ = oracle.brute_force_optimal(s)
            report = oracle.is_kss(opt, s)
            (emit_dir / f"{stem}.oracle.json").write_text(
                json.dumps(oracle.report_to_dict(report), indent=2, sort_keys=True) + "\n"
            )
    print(f"{len(jobs) - failures}/{len(jobs)} passed")
    return EXIT_OK if failures == 0 else EXIT_VERIFY_FAIL


def _parse_family(spec: str) -> dict:
    kind, _, rest = spec.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            params[key.strip()] = val.strip()
    return {"kind": kind, **params}


def cmd_bench(args) -> int:
    try:
        fam = _parse_family(args.instance_family)
        ks = [int(k) for k in args.k_sweep.split(",")]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    n = int(fam.get("n", 20))
    m = int(fam.get("m", 8))
    base_seed = int(fam.get("seed", 0))
    rows = []
    for k in ks:
        utilities, rounds, messages = [], [], []
        t0 = time.perf_counter()
        for rep in range(args.repeats):
            if fam["kind"] == "table":
                s = instances.random_table_instance(
                    n, m, seed=base_seed + rep, k_override=k
                )
            else:
                s = instances.random_synergy_instance(
                    n, m, seed=base_seed + rep, k_uniform=k
                )
            warm = GreedyMarginal() if args.warm == "greedy" else PreviousSolution()
            _, stats = engine.run_to_convergence(s, warm=warm)
            utilities.append(stats.final_utility)
            rounds.append(stats.rounds_to_converge)
            messages.append(stats.total_messages)
        wall = time.perf_counter() - t0
        rows.append(
            {
                "k": k,
                "mean_final_utility": sum(utilities) / len(utilities),
                "mean_rounds": sum(rounds) / len(rounds),
                "mean_messages": sum(messages) / len(messages),
                "wall_time_s": round(wall, 3),
            }
        )
    fieldnames = ["k", "mean_final_utility", "mean_rounds", "mean_messages", "wall_time_s"]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    writer = csv.DictWriter(sys.stdout, fieldnames=fieldnames)
    writer.writeheader()
    writer.writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="kscoal",
        description="Distributed coalition formation with verifiable stability.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one static instance")
    p.add_argument("--instance", required=True, help="instance JSON file")
    p.add_argument("--k", default="structure", help="'structure' or 'uniform:N'")
    p.add_argument("--warm", default="idle", help="'idle', 'greedy', or 'fixed:SPEC'")
    p.add_argument("--rounds", type=int, default=500, help="round limit")
    p.add_argument("--out", help="write result JSON here (default stdout)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="run a dynamic scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trace", action="store_true", help="dump robot trajectories CSV")
    p.add_argument("--no-coordination", action="store_true",
                   help="all-idle policy baseline (no coalition layer)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check engine results against the oracle")
    p.add_argument("--instances", help="directory of instance JSON files")
    p.add_argument("--random", type=int, default=200, help="number of random instances")
    p.add_argument("--max-robots", type=int, default=6)
    p.add_argument("--max-tasks", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-fixtures", help="write (instance, oracle report) pairs here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="k-sweep benchmark over an instance family")
    p.add_argument("--instance-family", required=True,
                   help="e.g. 'synergy:n=20,m=8,seed=0' or 'table:n=6,m=4'")
    p.add_argument("--k-sweep", default="1,2,3")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--warm", default="greedy", choices=["greedy", "idle"],
                   help="warm-start policy used for every run")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
