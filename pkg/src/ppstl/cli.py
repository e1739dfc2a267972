"""Command-line interface: graphs, check-feasibility, simulate, monitor.

Exit codes: 0 full pass, 2 invariant breach or violated task margin,
3 infeasible configuration (including insufficient trajectory data),
4 scenario schema error. Set PPSTL_VERBOSE=1 for progress on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    AssumptionViolationError,
    InfeasibleError,
    InsufficientDataError,
    PpstlError,
    ScenarioError,
)
from .graphs import (
    check_assumptions,
    cluster_decomposition,
    induced_matrices,
    k_hop_neighbors,
    min_eigenvalue_check,
    min_required_k,
)
from .scenario import parse_scenario
from .simulate import (
    Runtime,
    Trajectory,
    feasibility_check,
    graphs_report,
    monitor_series,
    run_simulation,
    satisfaction_report,
)

EXIT_PASS = 0
EXIT_BREACH = 2
EXIT_INFEASIBLE = 3
EXIT_SCHEMA = 4


def _say(msg):
    if os.environ.get("PPSTL_VERBOSE"):
        print(msg, file=sys.stderr)


def _emit(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n"
    if out:
        Path(out).write_text(text)
        _say(f"wrote {out}")
    else:
        sys.stdout.write(text)


def cmd_graphs(args) -> int:
    scenario = parse_scenario(args.scenario)
    gc = scenario.comm_graph()
    gt = scenario.task_graph()
    try:
        dec = cluster_decomposition(gc, gt)
    except AssumptionViolationError as exc:
        _emit({"error": str(exc), "ok": False}, args.out)
        return EXIT_INFEASIBLE
    report = check_assumptions(gc, gt, dec)
    doc = {
        "n_agents": gc.n_agents,
        "clusters": [sorted(c) for c in dec.clusters],
        "cluster_edges": sorted(list(e) for e in dec.cluster_edges),
        "topo_order": list(dec.topo_order),
        "leaf_clusters": list(dec.leaf_labels()),
        "min_required_k": min_required_k(gc, gt),
        "assumptions": report.to_dict(),
    }
    k = scenario.observer.k
    if k == "auto":
        k = max(2, doc["min_required_k"]) if doc["min_required_k"] > 0 else 0
    doc["k"] = k
    if report.ok and k >= 2:
        khop, lam = {}, {}
        for agent in gc.agents:
            nbh = k_hop_neighbors(gc, agent, k)
            if nbh.size == 0:
                continue
            khop[str(agent)] = list(nbh.members)
            lam[str(agent)] = min_eigenvalue_check(induced_matrices(gc, nbh))
        doc["k_hop_sets"] = khop
        doc["lambda_min"] = lam
    _emit(doc, args.out)
    return EXIT_PASS if report.ok else EXIT_INFEASIBLE


def cmd_check_feasibility(args) -> int:
    scenario = parse_scenario(args.scenario)
    doc = feasibility_check(scenario)
    _emit(doc, args.out)
    rho_ok = all(c["passes"] is not False for c in doc["rho_max_checks"])
    return EXIT_PASS if (doc["ok"] and rho_ok) else EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    scenario = parse_scenario(args.scenario)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _say(f"simulating {scenario.name} (seed={args.seed or scenario.sim.seed})")
    result = run_simulation(
        scenario, seed=args.seed, dt=args.dt, parallel=args.parallel,
        instrument=args.instrument,
    )
    traj_path = outdir / "trajectory.csv"
    result.trajectory.to_csv(traj_path)
    _say(f"wrote {traj_path}")
    _emit(result.events.to_dict(), outdir / "events.json")
    report = satisfaction_report(result)
    _emit(report, outdir / "satisfaction.json")
    if not args.no_plots:
        from .reporting import render_figures

        for p in render_figures(result, outdir / "figures"):
            _say(f"wrote {p}")
    n_ok = report["n_satisfied"]
    _say(f"{n_ok}/{report['n_tasks']} tasks satisfied; pass={report['pass']}")
    return EXIT_PASS if report["pass"] else EXIT_BREACH


def cmd_monitor(args) -> int:
    scenario = parse_scenario(args.scenario)
    runtime = Runtime(scenario)
    traj = Trajectory.from_csv(args.traj)
    times = traj.times
    doc = {"tasks": [], "n_tasks": len(runtime.tasks)}
    all_pos = True
    for task in runtime.tasks:
        series = np.empty(traj.n_rows)
        id_cols = {}
        for p in task.body.participants:
            agent = runtime.agents[runtime.index_of[p]]
            id_cols[p] = np.stack(
                [traj.column(f"x{p}_{c}") for c in agent.dynamics.pos_idx], axis=1
            )
        for r in range(traj.n_rows):
            states = {p: cols[r] for p, cols in id_cols.items()}
            series[r] = task.body.robustness_exact(states)[0]
        margin = monitor_series(task.temporal, times, series)
        all_pos &= margin > 0
        doc["tasks"].append({
            "task": task.name,
            "operator": task.temporal.op,
            "margin": margin,
            "satisfied": bool(margin > 0),
        })
    doc["pass"] = bool(all_pos)
    _emit(doc, args.out)
    return EXIT_PASS if all_pos else EXIT_BREACH


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppstl",
        description="Observer-based STL control: graph analysis, feasibility, "
                    "simulation and offline monitoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graphs", help="cluster decomposition and k-hop analysis")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_graphs)

    p = sub.add_parser("check-feasibility", help="funnel feasibility conditions")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check_feasibility)

    p = sub.add_parser("simulate", help="run the closed-loop simulation")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--parallel", action="store_true",
                   help="deterministic threaded round computation")
    p.add_argument("--instrument", action="store_true",
                   help="route observer reads through row-level scoped accessors")
    p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("monitor", help="offline margins for a logged trajectory")
    p.add_argument("--traj", required=True, help="trajectory CSV")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_monitor)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"scenario error: {problem}", file=sys.stderr)
        return EXIT_SCHEMA
    except (InfeasibleError, AssumptionViolationError, InsufficientDataError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PpstlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BREACH


if __name__ == "__main__":
    raise SystemExit(main())
