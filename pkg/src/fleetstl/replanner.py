"""Execution simulation with disturbances and event-triggered replanning.

The simulator plays planned trajectories sample by sample while applying
scripted events: DELAY holds a vehicle in place and shifts the rest of its
plan, DROPOUT freezes and removes a vehicle, DEVIATION displaces one.  Task
completion is certified online by counting contiguous in-region samples
against the required dwell.  Replanning triggers on plan deviation beyond
half the separation margin, on dropout of a vehicle that still owns tasks,
or when the projected residual time cannot cover the remaining work; the
residual mission (remaining tasks, current positions as depots, shrunk
horizon) then goes through the same route/seed/optimize pipeline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import Trajectory
from .mission import MissionConfig
from .parser import samples_from_seconds
from .pipeline import MissionPlan, plan_mission
from .router import HorizonTooShort, RoutePlan, blade_standoff_point

__all__ = [
    "Event",
    "EventScriptError",
    "load_events",
    "ExecutionState",
    "SimulationResult",
    "ReplanDecision",
    "ReplanRecord",
    "ExecutionVerdict",
    "MissionExecution",
    "ResidualInfeasible",
    "simulate",
    "should_replan",
    "replan",
    "execute_with_replanning",
    "task_keys",
]

_KINDS = ("DELAY", "DROPOUT", "DEVIATION")


class EventScriptError(Exception):
    """Malformed event script."""


class ResidualInfeasible(Exception):
    """The residual mission cannot be replanned."""

    def __init__(self, message: str, min_tn: Optional[float] = None):
        self.min_tn = min_tn
        super().__init__(message)


@dataclass(frozen=True)
class Event:
    trigger_k: int
    kind: str
    vehicle: int
    delay_s: float = 0.0
    offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise EventScriptError(f"unknown event kind {self.kind!r}")
        if self.trigger_k < 0:
            raise EventScriptError("event trigger index must be >= 0")
        if self.kind == "DELAY" and self.delay_s <= 0:
            raise EventScriptError("DELAY needs a positive duration")


def load_events(path) -> List[Event]:
    """Event script CSV: ``k,kind,vehicle[,param...]`` per line, # comments."""
    events: List[Event] = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            row = [cell.strip() for cell in row]
            if len(row) < 3:
                raise EventScriptError(f"line {ln}: need at least k,kind,vehicle")
            try:
                k = int(row[0])
                vehicle = int(row[2])
            except ValueError:
                raise EventScriptError(f"line {ln}: k and vehicle must be integers") from None
            kind = row[1].upper()
            if kind == "DELAY":
                if len(row) != 4:
                    raise EventScriptError(f"line {ln}: DELAY needs a duration in seconds")
                events.append(Event(k, kind, vehicle, delay_s=float(row[3])))
            elif kind == "DROPOUT":
                if len(row) != 3:
                    raise EventScriptError(f"line {ln}: DROPOUT takes no parameter")
                events.append(Event(k, kind, vehicle))
            elif kind == "DEVIATION":
                if len(row) != 6:
                    raise EventScriptError(f"line {ln}: DEVIATION needs dx,dy,dz")
                events.append(Event(k, kind, vehicle, offset=(float(row[3]), float(row[4]), float(row[5]))))
            else:
                raise EventScriptError(f"line {ln}: unknown event kind {row[1]!r}")
    events.sort(key=lambda e: (e.trigger_k, e.vehicle, e.kind))
    return events


# ---------------------------------------------------------------------------
# task bookkeeping

def task_keys(cfg: MissionConfig) -> List[str]:
    keys = [f"t{q}" for q in range(1, len(cfg.targets) + 1)]
    keys += [f"b{seg.sid}" for seg in cfg.blades]
    return keys


def _required_run(cfg: MissionConfig, key: str) -> int:
    if key.startswith("t"):
        return samples_from_seconds(cfg.t_ins, cfg.ts) + 1
    return samples_from_seconds(cfg.t_bla, cfg.ts) + 1


def _task_holds(cfg: MissionConfig, key: str, pos: np.ndarray, vel: np.ndarray) -> bool:
    if key.startswith("t"):
        return cfg.targets[int(key[1:]) - 1].contains(pos)
    seg = next(s for s in cfg.blades if s.sid == int(key[1:]))
    if not seg.box.contains(pos):
        return False
    from .mission import dist_to_segment

    d = dist_to_segment(pos, seg)
    if not (cfg.gamma_bla - cfg.eps < d < cfg.gamma_bla + cfg.eps):
        return False
    if cfg.blade_speed_band is not None:
        sp = float(np.linalg.norm(vel))
        lo, hi = cfg.blade_speed_band
        if not (lo < sp < hi):
            return False
    return True


def _task_point(cfg: MissionConfig, key: str) -> np.ndarray:
    if key.startswith("t"):
        return cfg.targets[int(key[1:]) - 1].center
    seg = next(s for s in cfg.blades if s.sid == int(key[1:]))
    return blade_standoff_point(seg, cfg.gamma_bla)


def _dwell_seconds(cfg: MissionConfig, key: str) -> float:
    return cfg.t_ins if key.startswith("t") else cfg.t_bla


def _route_task_keys(cfg: MissionConfig, route_plan: RoutePlan, vehicle: int) -> List[str]:
    """Task keys whose waypoints appear on this vehicle's route."""
    try:
        route = route_plan.route_for(vehicle)
    except KeyError:
        return []
    keys = []
    for visit in route.visits:
        if visit.kind == "target":
            keys.append(f"t{visit.ref}")
        elif visit.kind == "blade":
            keys.append(f"b{visit.ref}")
    return keys


# ---------------------------------------------------------------------------
# state and results

@dataclass(frozen=True)
class ExecutionState:
    k: int
    positions: Dict[int, np.ndarray]
    velocities: Dict[int, np.ndarray]
    completed: FrozenSet[str]
    active: FrozenSet[int]


@dataclass
class SimulationResult:
    states: List[ExecutionState]
    positions: np.ndarray  # (V, 3, N+1), NaN where inactive
    velocities: np.ndarray
    active_until: Dict[int, int]  # first sample index at which the vehicle is gone
    completed_at: Dict[str, int]
    warnings: List[str]


@dataclass
class ReplanDecision:
    trigger: bool
    reasons: List[str] = field(default_factory=list)


@dataclass
class ReplanRecord:
    k: int
    reasons: List[str]
    remaining_tasks: List[str]
    rho_exact: float
    iterations: int


@dataclass
class ExecutionVerdict:
    tasks_ok: bool
    safety_ok: bool
    homes_ok: bool
    first_violation: Optional[Tuple[int, str]]

    @property
    def satisfied(self) -> bool:
        return self.tasks_ok and self.safety_ok and self.homes_ok


@dataclass
class MissionExecution:
    positions: np.ndarray
    velocities: np.ndarray
    active_until: Dict[int, int]
    completed_at: Dict[str, int]
    replans: List[ReplanRecord]
    warnings: List[str]
    verdict: ExecutionVerdict


# ---------------------------------------------------------------------------
# core executor

class _Executor:
    def __init__(
        self,
        cfg: MissionConfig,
        trajectories: Dict[int, Trajectory],
        route_plan: Optional[RoutePlan],
    ):
        self.cfg = cfg
        self.ids = cfg.vehicle_ids()
        self.n = cfg.n_samples
        self.trajs = trajectories
        self.route_plan = route_plan
        self.plan_start = 0
        self.cursor = {vid: 0 for vid in self.ids}
        self.hold = {vid: 0 for vid in self.ids}
        self.offset = {vid: np.zeros(3) for vid in self.ids}
        self.active = set(self.ids)
        self.active_until = {vid: self.n + 1 for vid in self.ids}
        self.positions = np.full((len(self.ids), 3, self.n + 1), np.nan)
        self.velocities = np.full((len(self.ids), 3, self.n + 1), np.nan)
        self.run: Dict[Tuple[str, int], int] = {}
        self.completed_at: Dict[str, int] = {}
        self.warnings: List[str] = []

    def swap_plan(self, k: int, trajectories: Dict[int, Trajectory], route_plan: RoutePlan):
        self.trajs = trajectories
        self.route_plan = route_plan
        self.plan_start = k
        for vid in self.active:
            self.cursor[vid] = 0
            self.offset[vid] = np.zeros(3)

    def apply_events(self, k: int, events: Sequence[Event]):
        for ev in events:
            if ev.trigger_k != k:
                continue
            if ev.vehicle not in self.active:
                self.warnings.append(
                    f"event {ev.kind} at k={k} targets inactive vehicle {ev.vehicle}; ignored"
                )
                continue
            if ev.kind == "DELAY":
                self.hold[ev.vehicle] += samples_from_seconds(ev.delay_s, self.cfg.ts)
            elif ev.kind == "DROPOUT":
                self.active.discard(ev.vehicle)
                self.active_until[ev.vehicle] = k
            elif ev.kind == "DEVIATION":
                self.offset[ev.vehicle] = self.offset[ev.vehicle] + np.asarray(ev.offset)

    def record(self, k: int) -> ExecutionState:
        positions: Dict[int, np.ndarray] = {}
        velocities: Dict[int, np.ndarray] = {}
        for vi, vid in enumerate(self.ids):
            if vid not in self.active or vid not in self.trajs:
                continue
            traj = self.trajs[vid]
            rel = min(self.cursor[vid], traj.n_samples)
            pos = traj.p[:, rel] + self.offset[vid]
            vel = np.zeros(3) if self.hold[vid] > 0 else traj.v[:, rel].copy()
            self.positions[vi, :, k] = pos
            self.velocities[vi, :, k] = vel
            positions[vid] = pos
            velocities[vid] = vel

        for key in task_keys(self.cfg):
            if key in self.completed_at:
                continue
            need = _required_run(self.cfg, key)
            for vid in sorted(positions):
                holds = _task_holds(self.cfg, key, positions[vid], velocities[vid])
                slot = (key, vid)
                self.run[slot] = self.run.get(slot, 0) + 1 if holds else 0
                if self.run[slot] >= need and key not in self.completed_at:
                    self.completed_at[key] = k

        return ExecutionState(
            k=k,
            positions=positions,
            velocities=velocities,
            completed=frozenset(self.completed_at),
            active=frozenset(self.active),
        )

    def advance(self):
        for vid in self.active:
            if self.hold[vid] > 0:
                self.hold[vid] -= 1
            else:
                traj = self.trajs.get(vid)
                if traj is not None:
                    self.cursor[vid] = min(self.cursor[vid] + 1, traj.n_samples)


def simulate(
    trajectories: Dict[int, Trajectory],
    events: Sequence[Event],
    cfg: MissionConfig,
    route_plan: Optional[RoutePlan] = None,
) -> SimulationResult:
    """Execute planned trajectories under events, without replanning."""
    ex = _Executor(cfg, trajectories, route_plan)
    states = []
    for k in range(cfg.n_samples + 1):
        ex.apply_events(k, events)
        states.append(ex.record(k))
        ex.advance()
    for ev in events:
        if ev.trigger_k > cfg.n_samples:
            ex.warnings.append(f"event at k={ev.trigger_k} beyond horizon; ignored")
    return SimulationResult(
        states=states,
        positions=ex.positions,
        velocities=ex.velocities,
        active_until=ex.active_until,
        completed_at=dict(ex.completed_at),
        warnings=ex.warnings,
    )


# ---------------------------------------------------------------------------
# trigger rules

def should_replan(
    state: ExecutionState,
    trajectories: Dict[int, Trajectory],
    route_plan: RoutePlan,
    cfg: MissionConfig,
    plan_start_k: int = 0,
) -> ReplanDecision:
    """Trigger on deviation, dropout with pending work, or time shortfall."""
    reasons: List[str] = []
    threshold = cfg.gamma_dis / 2.0
    for vid in sorted(state.active):
        traj = trajectories.get(vid)
        if traj is None:
            continue
        rel = min(state.k - plan_start_k, traj.n_samples)
        planned = traj.p[:, rel]
        dev = float(np.linalg.norm(state.positions[vid] - planned))
        if dev > threshold:
            reasons.append(f"deviation[p{vid}]={dev:.3f}")

    for vid in cfg.vehicle_ids():
        if vid in state.active:
            continue
        owned = [k for k in _route_task_keys(cfg, route_plan, vid) if k not in state.completed]
        if owned:
            reasons.append(f"dropout[p{vid}]:{','.join(owned)}")

    residual_s = (cfg.n_samples - state.k) * cfg.ts
    for vid in sorted(state.active):
        keys = [k for k in _route_task_keys(cfg, route_plan, vid) if k not in state.completed]
        pos = state.positions[vid]
        travel = 0.0
        cur = pos
        spec = cfg.vehicles[cfg.vehicle_ids().index(vid)]
        for key in keys:
            point = _task_point(cfg, key)
            travel += float(np.linalg.norm(point - cur)) / spec.top_speed
            cur = point
        home = cfg.homes[cfg.vehicle_ids().index(vid)].center
        travel += float(np.linalg.norm(home - cur)) / spec.top_speed
        dwell = sum(_dwell_seconds(cfg, key) for key in keys)
        if travel + dwell > residual_s:
            reasons.append(f"time[p{vid}]={travel + dwell:.2f}s>{residual_s:.2f}s")

    return ReplanDecision(trigger=bool(reasons), reasons=reasons)


# ---------------------------------------------------------------------------
# residual replanning

def replan(
    state: ExecutionState,
    cfg: MissionConfig,
    max_iters: int = 5000,
    multi_start: int = 1,
    rng_seed: int = 0,
) -> MissionPlan:
    """Plan the residual mission from the current execution state.

    Remaining tasks only; depots become the current positions; horizon is the
    remaining time; home boxes are unchanged.
    """
    if not state.active:
        raise ResidualInfeasible("no active vehicles remain")
    residual_n = cfg.n_samples - state.k
    if residual_n < 2:
        raise ResidualInfeasible("residual horizon too short to plan in")

    targets = tuple(
        box for q, box in enumerate(cfg.targets, start=1) if f"t{q}" not in state.completed
    )
    blades = tuple(seg for seg in cfg.blades if f"b{seg.sid}" not in state.completed)

    vehicles = []
    homes = []
    for vid, home in zip(cfg.vehicle_ids(), cfg.homes):
        if vid not in state.active:
            continue
        spec = cfg.vehicles[cfg.vehicle_ids().index(vid)]
        vehicles.append(replace(spec, depot=tuple(state.positions[vid])))
        homes.append(home)

    residual = replace(
        cfg,
        targets=targets,
        blades=blades,
        vehicles=tuple(vehicles),
        homes=tuple(homes),
        tn=residual_n * cfg.ts,
    )
    try:
        return plan_mission(
            residual,
            max_iters=max_iters,
            multi_start=multi_start,
            rng_seed=rng_seed,
            check_config=False,
        )
    except HorizonTooShort as exc:
        raise ResidualInfeasible(str(exc), min_tn=exc.min_tn) from None


# ---------------------------------------------------------------------------
# full loop

def _audit(cfg: MissionConfig, ex: _Executor) -> ExecutionVerdict:
    n = cfg.n_samples
    ids = cfg.vehicle_ids()
    first: Optional[Tuple[int, str]] = None

    def note(k, desc):
        nonlocal first
        if first is None or k < first[0]:
            first = (k, desc)

    for k in range(n + 1):
        live = [
            (vi, vid)
            for vi, vid in enumerate(ids)
            if k < ex.active_until[vid] and np.isfinite(ex.positions[vi, 0, k])
        ]
        for vi, vid in live:
            pos = ex.positions[vi, :, k]
            if not cfg.workspace.contains(pos):
                note(k, f"workspace[p{vid}]")
            for q, obs in enumerate(cfg.obstacles, start=1):
                if obs.contains(pos):
                    note(k, f"obstacle[p{vid},o{q}]")
        for a in range(len(live)):
            for b in range(a + 1, len(live)):
                vi_a, vid_a = live[a]
                vi_b, vid_b = live[b]
                d = float(np.linalg.norm(ex.positions[vi_a, :, k] - ex.positions[vi_b, :, k]))
                if d < cfg.gamma_dis:
                    note(k, f"separation[p{vid_a},p{vid_b}]={d:.3f}")

    tasks_ok = all(key in ex.completed_at for key in task_keys(cfg))
    homes_ok = True
    for vi, vid in enumerate(ids):
        if ex.active_until[vid] <= n:
            continue
        home = cfg.homes[vi]
        if not home.contains(ex.positions[vi, :, n]):
            homes_ok = False
    return ExecutionVerdict(
        tasks_ok=tasks_ok,
        safety_ok=first is None,
        homes_ok=homes_ok,
        first_violation=first,
    )


def execute_with_replanning(
    cfg: MissionConfig,
    plan: MissionPlan,
    events: Sequence[Event],
    max_iters: int = 5000,
    multi_start: int = 1,
    rng_seed: int = 0,
) -> MissionExecution:
    """Simulate, trigger replans as needed, and audit the executed mission."""
    ex = _Executor(cfg, plan.outcome.trajectories, plan.route_plan)
    replans: List[ReplanRecord] = []
    n = cfg.n_samples
    for k in range(n + 1):
        ex.apply_events(k, events)
        state = ex.record(k)
        if k < n:
            decision = should_replan(state, ex.trajs, ex.route_plan, cfg, ex.plan_start)
            if decision.trigger:
                new_plan = replan(
                    state, cfg, max_iters=max_iters, multi_start=multi_start, rng_seed=rng_seed
                )
                ex.swap_plan(k, new_plan.outcome.trajectories, new_plan.route_plan)
                remaining = [key for key in task_keys(cfg) if key not in state.completed]
                replans.append(
                    ReplanRecord(
                        k=k,
                        reasons=decision.reasons,
                        remaining_tasks=remaining,
                        rho_exact=new_plan.outcome.rho_exact,
                        iterations=new_plan.outcome.iterations,
                    )
                )
        ex.advance()
    for ev in events:
        if ev.trigger_k > n:
            ex.warnings.append(f"event at k={ev.trigger_k} beyond horizon; ignored")
    verdict = _audit(cfg, ex)
    return MissionExecution(
        positions=ex.positions,
        velocities=ex.velocities,
        active_until=ex.active_until,
        completed_at=dict(ex.completed_at),
        replans=replans,
        warnings=ex.warnings,
        verdict=verdict,
    )
