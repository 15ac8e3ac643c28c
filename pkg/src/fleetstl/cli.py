"""Command-line front end: plan, check, seed, simulate.

Artifacts are plain CSV/JSON so any plotting or audit tool can consume them.
Every command is deterministic for identical inputs; stage timings go to
stderr only, keeping the written reports byte-stable across runs.

Exit codes: 0 success, 1 property not satisfied (check/simulate), 2 bad
config or inputs, 3 horizon too short, 4 optimization finished below the
robustness floor, 5 residual mission infeasible during replanning.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dynamics import Trajectory
from .formula import Signal
from .mission import ConfigError, MissionConfig, load_config, validate
from .optimizer import signal_from_trajectories
from .pipeline import InvalidMission, MissionPlan, plan_mission
from .replanner import (
    EventScriptError,
    ResidualInfeasible,
    execute_with_replanning,
    load_events,
)
from .robustness import evaluate, labeled_traces
from .router import HorizonTooShort, plan_routes, seed_trajectories

__all__ = ["main"]


class CliError(Exception):
    def __init__(self, message: str, exit_code: int):
        self.exit_code = exit_code
        super().__init__(message)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(x: float) -> str:
    return f"{x:.9f}"


def _write_trajectories_csv(path: Path, trajs: Dict[int, Trajectory], ts: float):
    """Rows ordered by sample then vehicle; the input column is zero at k=N."""
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "vehicle", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az"])
        ids = sorted(trajs)
        n = trajs[ids[0]].n_samples
        for k in range(n + 1):
            for vid in ids:
                traj = trajs[vid]
                a = traj.a[:, k] if k < n else np.zeros(3)
                w.writerow(
                    [_fmt(k * ts), vid]
                    + [_fmt(traj.p[j, k]) for j in range(3)]
                    + [_fmt(traj.v[j, k]) for j in range(3)]
                    + [_fmt(a[j]) for j in range(3)]
                )


def _write_executed_csv(path: Path, execution, cfg: MissionConfig):
    ids = cfg.vehicle_ids()
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "vehicle", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az"])
        for k in range(cfg.n_samples + 1):
            for vi, vid in enumerate(ids):
                if not np.isfinite(execution.positions[vi, 0, k]):
                    continue
                w.writerow(
                    [_fmt(k * cfg.ts), vid]
                    + [_fmt(execution.positions[vi, j, k]) for j in range(3)]
                    + [_fmt(execution.velocities[vi, j, k]) for j in range(3)]
                    + [_fmt(0.0)] * 3
                )


def _write_iterations_csv(path: Path, log):
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "beta", "rho_exact", "rho_smooth", "grad_norm", "step"])
        for rec in log:
            w.writerow(
                [
                    rec.iteration,
                    _fmt(rec.beta),
                    _fmt(rec.rho_exact),
                    _fmt(rec.rho_smooth),
                    f"{rec.grad_norm:.3e}",
                    f"{rec.step:.3e}",
                ]
            )


def _write_route_csv(path: Path, graph, selection):
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "i", "j", "w", "z"])
        if graph is None:
            return
        nv = graph.n_nodes
        for d, vid in enumerate(graph.vehicle_ids):
            for i in range(nv):
                for j in range(nv):
                    if i == j:
                        continue
                    z = int(selection.z[d, i, j]) if selection is not None else 0
                    w.writerow([vid, i, j, _fmt(graph.weights[d, i, j]), z])


def _write_margins_csv(path: Path, phi, signal: Signal):
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "k", "t", "rho"])
        for p, label, arr in labeled_traces(phi, signal):
            for k, val in enumerate(arr):
                w.writerow([p, label, k, _fmt(k * signal.ts), _fmt(float(val))])


def _route_plan_dict(plan) -> dict:
    return {
        "cost": plan.cost,
        "covered": sorted(plan.covered),
        "routes": [
            {
                "vehicle": r.vehicle,
                "cycle": list(r.cycle),
                "home_arrive_k": r.home_arrive_k,
                "visits": [
                    {
                        "node": v.node,
                        "kind": v.kind,
                        "ref": v.ref,
                        "arrive_k": v.arrive_k,
                        "depart_k": v.depart_k,
                    }
                    for v in r.visits
                ],
            }
            for r in plan.routes
        ],
    }


def _write_report(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _effective_config(args) -> MissionConfig:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        raise CliError(f"config error: {exc}", 2) from None
    if args.beta is not None:
        from dataclasses import replace

        cfg = replace(cfg, beta=float(args.beta))
    return cfg


def _validate_or_fail(cfg: MissionConfig):
    issues = validate(cfg)
    if issues:
        for issue in issues:
            print(f"{issue.code} {issue.where}: {issue.message}")
        raise CliError("config validation failed", 2)


def _load_signal_csv(paths: Sequence[str], cfg: MissionConfig) -> Signal:
    rows: List[dict] = []
    for p in paths:
        try:
            with open(p, "r", encoding="utf-8", newline="") as fh:
                reader = csv.DictReader(fh)
                expected = ["t", "vehicle", "px", "py", "pz", "vx", "vy", "vz", "ax", "ay", "az"]
                if reader.fieldnames is None or list(reader.fieldnames) != expected:
                    raise CliError(f"{p}: bad or missing trajectory header", 2)
                rows.extend(reader)
        except OSError as exc:
            raise CliError(f"{p}: {exc}", 2) from None
    if not rows:
        raise CliError("no trajectory rows found", 2)

    n = cfg.n_samples
    ids = cfg.vehicle_ids()
    p = np.full((len(ids), 3, n + 1), np.nan)
    v = np.full((len(ids), 3, n + 1), np.nan)
    for row in rows:
        try:
            vid = int(row["vehicle"])
            t = float(row["t"])
        except (TypeError, ValueError):
            raise CliError("malformed trajectory row", 2) from None
        if vid not in ids:
            raise CliError(f"trajectory vehicle {vid} not in config", 2)
        k = round(t / cfg.ts)
        if not (0 <= k <= n) or abs(k * cfg.ts - t) > 1e-6:
            raise CliError(f"time {t} not on the configured sample grid", 2)
        vi = ids.index(vid)
        p[vi, :, k] = [float(row["px"]), float(row["py"]), float(row["pz"])]
        v[vi, :, k] = [float(row["vx"]), float(row["vy"]), float(row["vz"])]
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
        raise CliError("trajectories incomplete: every vehicle needs all N+1 samples", 2)
    return Signal(p=p, v=v, ts=cfg.ts, ids=ids)


def _print_breakdown(report):
    print(f"rho_exact  = {report.rho:.6f}")
    print(f"rho_smooth = {report.rho_smooth:.6f} (beta={report.beta:g})")
    print(f"verdict    = {'satisfied' if report.verdict else 'violated'}")
    for path, label in sorted(report.labels.items(), key=lambda kv: kv[1]):
        val = report.per_subformula.get(path)
        if val is not None:
            print(f"  {label:<28s} rho={val: .6f}")


# ---------------------------------------------------------------------------
# commands

def cmd_plan(args) -> int:
    cfg = _effective_config(args)
    _validate_or_fail(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    try:
        plan = plan_mission(
            cfg,
            max_iters=args.max_iters,
            multi_start=args.multi_start,
            rng_seed=args.seed,
        )
    except InvalidMission as exc:
        for issue in exc.issues:
            print(f"{issue.code} {issue.where}: {issue.message}")
        return 2
    except HorizonTooShort as exc:
        print(f"HORIZON_TOO_SHORT: minimal feasible TN is {exc.min_tn:g} s")
        return 3
    elapsed = time.perf_counter() - t0

    signal = signal_from_trajectories(plan.outcome.trajectories, cfg)
    report = evaluate(plan.formula, signal, cfg.beta)

    _write_trajectories_csv(out / "trajectories.csv", plan.outcome.trajectories, cfg.ts)
    _write_trajectories_csv(out / "seed_trajectories.csv", plan.seed.trajectories, cfg.ts)
    _write_iterations_csv(out / "iterations.csv", plan.outcome.log)
    _write_route_csv(out / "route_edges.csv", plan.graph, plan.selection)
    if args.margins:
        _write_margins_csv(out / "margins.csv", plan.formula, signal)

    payload = {
        "command": "plan",
        "config_digest": _digest(Path(args.config)),
        "n_samples": cfg.n_samples,
        "ts": cfg.ts,
        "beta": cfg.beta,
        "zeta": cfg.zeta,
        "route": _route_plan_dict(plan.route_plan),
        "milp": None
        if plan.selection is None
        else {
            "objective": plan.selection.objective,
            "optimal": plan.selection.optimal,
            "nodes_explored": plan.selection.nodes_explored,
        },
        "solve": {
            "rho_exact": plan.outcome.rho_exact,
            "rho_smooth": plan.outcome.rho_smooth,
            "zeta_satisfied": plan.outcome.zeta_satisfied,
            "iterations": plan.outcome.iterations,
            "reason": plan.outcome.reason,
            "velocity_violations": plan.outcome.velocity_violations,
        },
        "robustness": report.to_dict(),
        "artifacts": {
            "trajectories": "trajectories.csv",
            "seed_trajectories": "seed_trajectories.csv",
            "iterations": "iterations.csv",
            "route_edges": "route_edges.csv",
            **({"margins": "margins.csv"} if args.margins else {}),
        },
    }
    _write_report(out / "report.json", payload)

    print(f"plan written to {out}", file=sys.stderr)
    print(f"stage timing: total {elapsed:.2f}s", file=sys.stderr)
    _print_breakdown(report)
    return 0 if plan.outcome.zeta_satisfied else 4


def cmd_check(args) -> int:
    cfg = _effective_config(args)
    _validate_or_fail(cfg)
    signal = _load_signal_csv(args.trajectories, cfg)
    from .mission import build_formula

    phi = build_formula(cfg)
    report = evaluate(phi, signal, cfg.beta)
    _print_breakdown(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "command": "check",
            "config_digest": _digest(Path(args.config)),
            "robustness": report.to_dict(),
        }
        _write_report(out / "check_report.json", payload)
        if args.margins:
            _write_margins_csv(out / "margins.csv", phi, signal)
    return 0 if report.rho > 0 else 1


def cmd_seed(args) -> int:
    cfg = _effective_config(args)
    _validate_or_fail(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph, selection, route_plan = plan_routes(cfg)
    try:
        seed = seed_trajectories(route_plan, cfg)
    except HorizonTooShort as exc:
        print(f"HORIZON_TOO_SHORT: minimal feasible TN is {exc.min_tn:g} s")
        return 3
    _write_trajectories_csv(out / "seed_trajectories.csv", seed.trajectories, cfg.ts)
    _write_route_csv(out / "route_edges.csv", graph, selection)
    payload = {
        "command": "seed",
        "config_digest": _digest(Path(args.config)),
        "route": _route_plan_dict(route_plan),
        "milp": None
        if selection is None
        else {
            "objective": selection.objective,
            "optimal": selection.optimal,
            "nodes_explored": selection.nodes_explored,
        },
    }
    _write_report(out / "seed_report.json", payload)
    print(f"route cost {route_plan.cost:.3f}s over {len(route_plan.covered)} task nodes")
    return 0


def cmd_simulate(args) -> int:
    cfg = _effective_config(args)
    _validate_or_fail(cfg)
    try:
        events = load_events(args.events)
    except (EventScriptError, OSError, ValueError) as exc:
        print(f"event script error: {exc}")
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    try:
        plan = plan_mission(
            cfg, max_iters=args.max_iters, multi_start=args.multi_start, rng_seed=args.seed
        )
    except InvalidMission as exc:
        for issue in exc.issues:
            print(f"{issue.code} {issue.where}: {issue.message}")
        return 2
    except HorizonTooShort as exc:
        print(f"HORIZON_TOO_SHORT: minimal feasible TN is {exc.min_tn:g} s")
        return 3

    try:
        execution = execute_with_replanning(
            cfg,
            plan,
            events,
            max_iters=args.max_iters,
            multi_start=args.multi_start,
            rng_seed=args.seed,
        )
    except ResidualInfeasible as exc:
        print(f"RESIDUAL_INFEASIBLE: {exc}")
        return 5

    _write_trajectories_csv(out / "trajectories.csv", plan.outcome.trajectories, cfg.ts)
    _write_executed_csv(out / "executed.csv", execution, cfg)
    verdict = execution.verdict
    payload = {
        "command": "simulate",
        "config_digest": _digest(Path(args.config)),
        "n_samples": cfg.n_samples,
        "events": [
            {
                "k": e.trigger_k,
                "kind": e.kind,
                "vehicle": e.vehicle,
                "delay_s": e.delay_s,
                "offset": list(e.offset),
            }
            for e in events
        ],
        "completed_at": dict(sorted(execution.completed_at.items())),
        "replans": [
            {
                "k": r.k,
                "reasons": r.reasons,
                "remaining_tasks": r.remaining_tasks,
                "rho_exact": r.rho_exact,
                "iterations": r.iterations,
            }
            for r in execution.replans
        ],
        "warnings": execution.warnings,
        "verdict": {
            "tasks_ok": verdict.tasks_ok,
            "safety_ok": verdict.safety_ok,
            "homes_ok": verdict.homes_ok,
            "first_violation": list(verdict.first_violation) if verdict.first_violation else None,
            "satisfied": verdict.satisfied,
        },
    }
    _write_report(out / "simulate_report.json", payload)
    print(f"replans: {len(execution.replans)}; completed: {sorted(execution.completed_at)}")
    print(f"verdict: {'satisfied' if verdict.satisfied else 'violated'}")
    return 0 if verdict.satisfied else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleetstl",
        description="Fleet inspection mission planning via smooth STL robustness maximization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("config", help="mission config JSON")
        if needs_out:
            p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--beta", type=float, default=None, help="override smoothing sharpness")
        p.add_argument("--max-iters", type=int, default=5000)
        p.add_argument("--multi-start", type=int, default=1)
        p.add_argument("--seed", type=int, default=0, help="RNG seed for multi-start")
        p.add_argument("--margins", action="store_true", help="emit per-clause robustness CSV")

    p_plan = sub.add_parser("plan", help="route, seed and optimize a mission")
    common(p_plan)
    p_plan.set_defaults(func=cmd_plan)

    p_check = sub.add_parser("check", help="evaluate robustness of trajectories")
    p_check.add_argument("config")
    p_check.add_argument("trajectories", nargs="+", help="trajectory CSV file(s)")
    p_check.add_argument("--out", default=None)
    p_check.add_argument("--beta", type=float, default=None)
    p_check.add_argument("--margins", action="store_true")
    p_check.set_defaults(func=cmd_check)

    p_seed = sub.add_parser("seed", help="run the router only and dump the route plan")
    common(p_seed)
    p_seed.set_defaults(func=cmd_seed)

    p_sim = sub.add_parser("simulate", help="plan, execute with events, replan on trigger")
    p_sim.add_argument("config")
    p_sim.add_argument("events", help="event script CSV")
    p_sim.add_argument("--out", default="out")
    p_sim.add_argument("--beta", type=float, default=None)
    p_sim.add_argument("--max-iters", type=int, default=5000)
    p_sim.add_argument("--multi-start", type=int, default=1)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--margins", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc))
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
