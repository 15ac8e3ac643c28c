"""Routing layer: task graph, flow MILP, subtour repair, seed trajectories.

The MILP chooses one binary edge variable per (vehicle, directed edge pair),
minimizing total flight time subject to per-vehicle flow conservation at task
nodes, coverage of every task by at least one vehicle, and exactly one
departure from and return to each vehicle's depot.  Subtour elimination is
deliberately absent; disconnected cycles are spliced into the depot-anchored
trunk afterwards by cheapest insertion.  The repaired routes are then turned
into dynamically exact seed trajectories with velocity headroom for the
robustness optimizer.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import VehicleSpec, rollout, Trajectory
from .lp import solve_lp
from .mission import MissionConfig
from .parser import samples_from_seconds

__all__ = [
    "GraphNode",
    "RoutingGraph",
    "EdgeSelection",
    "NodeVisit",
    "VehicleRoute",
    "RoutePlan",
    "RouterError",
    "HorizonTooShort",
    "build_graph",
    "blade_standoff_point",
    "solve_milp",
    "repair_subtours",
    "seed_trajectories",
    "plan_routes",
    "SeedResult",
]

_MIN_EDGE_LEN = 1e-9
_INT_TOL = 1e-6
_SPEED_FRACTION = 0.7  # seed headroom relative to the vehicle limits


class RouterError(Exception):
    """Routing failed structurally (infeasible model or malformed selection)."""


class HorizonTooShort(Exception):
    """The configured mission horizon cannot fit the seed routes."""

    def __init__(self, min_tn: float):
        self.min_tn = min_tn
        super().__init__(f"horizon too short; minimal feasible TN is {min_tn:g} s")


# ---------------------------------------------------------------------------
# graph

@dataclass(frozen=True)
class GraphNode:
    idx: int
    kind: str  # "depot" | "target" | "blade"
    ref: int  # vehicle id, target number or blade number
    pos: Tuple[float, float, float]


@dataclass(frozen=True)
class RoutingGraph:
    nodes: Tuple[GraphNode, ...]
    weights: np.ndarray  # (n_vehicles, |V|, |V|), seconds
    vehicle_ids: Tuple[int, ...]
    depot_idx: Dict[int, int]
    task_indices: Tuple[int, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def blade_standoff_point(seg, gamma_bla: float) -> np.ndarray:
    """Routing waypoint for a blade side: midpoint offset along the horizontal normal."""
    a = np.asarray(seg.a, dtype=float)
    b = np.asarray(seg.b, dtype=float)
    mid = (a + b) / 2.0
    u = b - a
    norm = np.linalg.norm(u)
    if norm == 0:
        raise RouterError(f"blade segment {seg.sid} is degenerate")
    u = u / norm
    horiz = np.array([-u[1], u[0], 0.0])
    h = np.linalg.norm(horiz)
    if h < 1e-12:
        horiz = np.array([1.0, 0.0, 0.0])
    else:
        horiz = horiz / h
    return mid + gamma_bla * horiz


def build_graph(cfg: MissionConfig) -> RoutingGraph:
    """Complete digraph over depots and task nodes with per-vehicle time weights."""
    nodes: List[GraphNode] = []
    depot_idx: Dict[int, int] = {}
    for veh in cfg.vehicles:
        depot_idx[veh.id] = len(nodes)
        nodes.append(GraphNode(len(nodes), "depot", veh.id, veh.depot))
    for q, target in enumerate(cfg.targets, start=1):
        nodes.append(GraphNode(len(nodes), "target", q, tuple(target.center)))
    for seg in cfg.blades:
        nodes.append(GraphNode(len(nodes), "blade", seg.sid, tuple(blade_standoff_point(seg, cfg.gamma_bla))))

    nv = len(nodes)
    pos = np.array([n.pos for n in nodes])
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    dist = np.maximum(dist, _MIN_EDGE_LEN)
    np.fill_diagonal(dist, 0.0)

    weights = np.zeros((cfg.delta, nv, nv))
    for di, veh in enumerate(cfg.vehicles):
        weights[di] = dist / veh.top_speed

    task_indices = tuple(n.idx for n in nodes if n.kind != "depot")
    return RoutingGraph(
        nodes=tuple(nodes),
        weights=weights,
        vehicle_ids=cfg.vehicle_ids(),
        depot_idx=depot_idx,
        task_indices=task_indices,
    )


# ---------------------------------------------------------------------------
# MILP via branch and bound on the LP relaxation

@dataclass
class EdgeSelection:
    z: np.ndarray  # (n_vehicles, |V|, |V|) binary
    objective: float
    optimal: bool  # False when the node budget was exhausted
    nodes_explored: int


def _milp_matrices(g: RoutingGraph):
    nv = g.n_nodes
    edges = [(i, j) for i in range(nv) for j in range(nv) if i != j]
    ne = len(edges)
    n_veh = len(g.vehicle_ids)
    n_vars = n_veh * ne
    edge_pos = {e: p for p, e in enumerate(edges)}

    def var(d: int, i: int, j: int) -> int:
        return d * ne + edge_pos[(i, j)]

    c = np.empty(n_vars)
    for d in range(n_veh):
        for p, (i, j) in enumerate(edges):
            c[d * ne + p] = g.weights[d, i, j]

    rows_eq: List[np.ndarray] = []
    b_eq: List[float] = []
    for d in range(n_veh):
        for t in g.task_indices:
            row = np.zeros(n_vars)
            for i in range(nv):
                if i != t:
                    row[var(d, i, t)] = 1.0
                    row[var(d, t, i)] -= 1.0
            rows_eq.append(row)
            b_eq.append(0.0)
    for d, vid in enumerate(g.vehicle_ids):
        o = g.depot_idx[vid]
        row_out = np.zeros(n_vars)
        row_in = np.zeros(n_vars)
        for j in range(nv):
            if j != o:
                row_out[var(d, o, j)] = 1.0
                row_in[var(d, j, o)] = 1.0
        rows_eq.append(row_out)
        b_eq.append(1.0)
        rows_eq.append(row_in)
        b_eq.append(1.0)

    rows_ub: List[np.ndarray] = []
    b_ub: List[float] = []
    for t in g.task_indices:
        row = np.zeros(n_vars)
        for d in range(n_veh):
            for i in range(nv):
                if i != t:
                    row[var(d, i, t)] = -1.0
        rows_ub.append(row)
        b_ub.append(-1.0)

    a_eq = np.array(rows_eq) if rows_eq else np.zeros((0, n_vars))
    a_ub = np.array(rows_ub) if rows_ub else np.zeros((0, n_vars))
    return edges, c, a_eq, np.array(b_eq), a_ub, np.array(b_ub)


def _solve_fixed_lp(c, a_eq, b_eq, a_ub, b_ub, lb, ub):
    """LP relaxation with some variables pinned to 0 or 1."""
    free = np.nonzero(lb < ub)[0]
    ones = np.nonzero(lb == 1)[0]
    offset = float(c[ones].sum())
    be = b_eq - a_eq[:, ones].sum(axis=1) if ones.size else b_eq
    bu = b_ub - a_ub[:, ones].sum(axis=1) if ones.size else b_ub
    res = solve_lp(
        c[free],
        a_eq[:, free],
        be,
        a_ub[:, free],
        bu,
        upper=np.ones(free.size),
    )
    if res.status != "optimal":
        return None
    x = lb.astype(float).copy()
    x[free] = res.x
    return x, res.objective + offset


def solve_milp(g: RoutingGraph, max_nodes: int = 50000) -> EdgeSelection:
    """Best-first branch and bound over the LP relaxation.

    Branches on the most fractional variable (lowest index on ties); the
    returned selection is optimal within the model unless the node budget ran
    out, in which case the best incumbent is returned flagged non-optimal.
    """
    edges, c, a_eq, b_eq, a_ub, b_ub = _milp_matrices(g)
    n_vars = c.size
    if n_vars == 0:
        raise RouterError("graph has no edges to route over")

    lb0 = np.zeros(n_vars, dtype=np.int8)
    ub0 = np.ones(n_vars, dtype=np.int8)
    root = _solve_fixed_lp(c, a_eq, b_eq, a_ub, b_ub, lb0, ub0)
    if root is None:
        raise RouterError("LP relaxation infeasible; the routing model has no solution")

    heap = []
    counter = 0
    x0, bound0 = root
    heapq.heappush(heap, (bound0, counter, lb0, ub0, x0))

    incumbent_z = None
    incumbent_obj = np.inf
    explored = 0
    budget_hit = False

    while heap:
        bound, _, lb, ub, x = heapq.heappop(heap)
        if bound >= incumbent_obj - 1e-9:
            break
        explored += 1
        if explored > max_nodes:
            budget_hit = True
            break

        frac = np.abs(x - np.round(x))
        if frac.max() <= _INT_TOL:
            obj = float(c @ np.round(x))
            if obj < incumbent_obj - 1e-9:
                incumbent_obj = obj
                incumbent_z = np.round(x).astype(int)
            continue

        branch_var = int(np.argmax(np.minimum(frac, 1.0 - frac)))
        for value in (0, 1):
            lb2, ub2 = lb.copy(), ub.copy()
            if value == 0:
                ub2[branch_var] = 0
            else:
                lb2[branch_var] = 1
            child = _solve_fixed_lp(c, a_eq, b_eq, a_ub, b_ub, lb2, ub2)
            if child is None:
                continue
            cx, cbound = child
            if cbound < incumbent_obj - 1e-9:
                counter += 1
                heapq.heappush(heap, (cbound, counter, lb2, ub2, cx))

    if incumbent_z is None:
        raise RouterError("no integral routing solution found within the node budget")

    nv = g.n_nodes
    n_veh = len(g.vehicle_ids)
    z = np.zeros((n_veh, nv, nv), dtype=int)
    for d in range(n_veh):
        for p, (i, j) in enumerate(edges):
            z[d, i, j] = incumbent_z[d * len(edges) + p]
    return EdgeSelection(
        z=z,
        objective=float(np.sum(z * g.weights)),
        optimal=not budget_hit,
        nodes_explored=explored,
    )


# ---------------------------------------------------------------------------
# route plans

@dataclass(frozen=True)
class NodeVisit:
    node: int
    kind: str
    ref: int
    pos: Tuple[float, float, float]
    arrive_k: int
    depart_k: int


@dataclass(frozen=True)
class VehicleRoute:
    vehicle: int
    cycle: Tuple[int, ...]  # node indices, starting and ending at the depot
    visits: Tuple[NodeVisit, ...]
    home_pos: Tuple[float, float, float]
    home_arrive_k: int


@dataclass(frozen=True)
class RoutePlan:
    routes: Tuple[VehicleRoute, ...]
    cost: float
    covered: frozenset

    def route_for(self, vehicle: int) -> VehicleRoute:
        for r in self.routes:
            if r.vehicle == vehicle:
                return r
        raise KeyError(f"no route for vehicle {vehicle}")


def _walks_from(succ: Dict[int, List[int]], start: int) -> List[int]:
    walk = [start]
    cur = start
    while succ.get(cur):
        cur = succ[cur].pop(0)
        walk.append(cur)
    return walk


def _decompose_walk(walk: List[int]) -> Tuple[List[List[int]], List[int]]:
    """Split a walk into simple cycles plus the remaining simple chain."""
    cycles: List[List[int]] = []
    stack: List[int] = []
    pos: Dict[int, int] = {}
    for node in walk:
        if node in pos:
            cut = pos[node]
            cycle = stack[cut:]
            cycles.append(cycle)
            for n in cycle[1:]:
                pos.pop(n, None)
            stack = stack[: cut + 1]
        else:
            pos[node] = len(stack)
            stack.append(node)
    return cycles, stack


def _extract_structures(edge_list: List[Tuple[int, int]], depot: int):
    """Edge-disjoint simple cycles (and open chains, if flow is unbalanced).

    Walks start at nodes with remaining out-surplus (chain heads), then at the
    depot, then anywhere edges remain; each walk splits into simple cycles
    plus at most one chain.
    """
    succ: Dict[int, List[int]] = {}
    for i, j in sorted(edge_list):
        succ.setdefault(i, []).append(j)
    in_count: Dict[int, int] = {}
    for _, j in edge_list:
        in_count[j] = in_count.get(j, 0) + 1

    cycles: List[List[int]] = []
    chains: List[List[int]] = []

    def remaining_out(n):
        return len(succ.get(n, ()))

    while any(succ.values()):
        start = None
        for n in sorted(succ):
            if remaining_out(n) > in_count.get(n, 0):
                start = n
                break
        if start is None and remaining_out(depot):
            start = depot
        if start is None:
            start = min(n for n in succ if remaining_out(n))
        walk = _walks_from(succ, start)
        for j in walk[1:]:
            in_count[j] = in_count.get(j, 0) - 1
        wcycles, chain = _decompose_walk(walk)
        cycles.extend(wcycles)
        if len(chain) > 1:
            chains.append(chain)
    return cycles, chains


def _canonical(cycle: Sequence[int]) -> Tuple[int, ...]:
    k = cycle.index(min(cycle))
    return tuple(cycle[k:]) + tuple(cycle[:k])


def _leg_profile(spec: VehicleSpec, p_from: np.ndarray, p_to: np.ndarray, ts: float):
    """Discrete rest-to-rest profile along a straight leg.

    Returns (n_samples, n_ramp, accel_value, unit_direction); the symmetric
    ramp-cruise-ramp acceleration lands exactly on the goal with zero final
    velocity while staying inside the headroom fraction of every per-axis
    velocity and acceleration bound.
    """
    d = np.asarray(p_to, dtype=float) - np.asarray(p_from, dtype=float)
    length = float(np.linalg.norm(d))
    if length < 1e-12:
        return 0, 0, 0.0, np.zeros(3)
    u = d / length
    v_cap = np.inf
    a_cap = np.inf
    for j in range(3):
        if abs(u[j]) > 1e-12:
            v_cap = min(v_cap, _SPEED_FRACTION * min(spec.v_max[j], -spec.v_min[j]) / abs(u[j]))
            a_cap = min(a_cap, _SPEED_FRACTION * min(spec.a_max[j], -spec.a_min[j]) / abs(u[j]))
    n = 2
    while n < 1_000_000:
        best_reach = 0.0
        best_n1 = 1
        for n1 in range(1, n // 2 + 1):
            alpha_max = min(a_cap, v_cap / (n1 * ts))
            reach = alpha_max * ts * ts * n1 * (n - n1)
            if reach > best_reach + 1e-15:
                best_reach = reach
                best_n1 = n1
        if best_reach >= length - 1e-12:
            alpha = length / (ts * ts * best_n1 * (n - best_n1))
            return n, best_n1, alpha, u
        n += 1
    raise RouterError("leg too long for the vehicle's kinematic limits")


def _timed_route(
    vehicle: VehicleSpec,
    cycle: Sequence[int],
    g: RoutingGraph,
    cfg: MissionConfig,
) -> Tuple[Tuple[NodeVisit, ...], int, Tuple[float, float, float]]:
    """Arrival/departure samples for each visited node plus the home arrival."""
    n_ins = samples_from_seconds(cfg.t_ins, cfg.ts)
    n_bla = samples_from_seconds(cfg.t_bla, cfg.ts)
    home_pos = tuple(cfg.homes[cfg.vehicle_ids().index(vehicle.id)].center)

    visits: List[NodeVisit] = []
    k = 0
    cur = np.asarray(vehicle.depot, dtype=float)
    for idx in cycle[1:-1]:  # skip the depot at both ends
        node = g.nodes[idx]
        n_leg, _, _, _ = _leg_profile(vehicle, cur, np.asarray(node.pos), cfg.ts)
        arrive = k + n_leg
        dwell = {"target": n_ins, "blade": n_bla}.get(node.kind, 0)
        depart = arrive + dwell
        visits.append(NodeVisit(idx, node.kind, node.ref, node.pos, arrive, depart))
        k = depart
        cur = np.asarray(node.pos)
    n_home, _, _, _ = _leg_profile(vehicle, cur, np.asarray(home_pos), cfg.ts)
    return tuple(visits), k + n_home, home_pos


def repair_subtours(z: np.ndarray, g: RoutingGraph, cfg: MissionConfig) -> RoutePlan:
    """Splice depot-free cycles into depot trunks; one simple cycle per vehicle.

    Every orphan cycle is inserted into the trunk (of whichever vehicle can
    absorb it most cheaply) by replacing one trunk edge (u, v) with
    u -> cycle entry ... cycle exit -> v; repeated node visits are then
    shortcut so each final cycle is simple.  Raises :class:`RouterError` if
    the selection violates flow conservation or the depot degrees.
    """
    n_veh, nv, _ = z.shape
    if n_veh != len(g.vehicle_ids):
        raise RouterError("selection shape does not match the graph")

    trunks: Dict[int, List[int]] = {}
    orphans: List[Tuple[Tuple[int, ...], int]] = []  # (canonical cycle, source vehicle row)

    for d, vid in enumerate(g.vehicle_ids):
        o = g.depot_idx[vid]
        edge_list = [(int(i), int(j)) for i in range(nv) for j in range(nv) if z[d, i, j]]
        for t in g.task_indices:
            if z[d, :, t].sum() != z[d, t, :].sum():
                raise RouterError(f"flow conservation violated at node {t} for vehicle {vid}")
        if z[d, o, :].sum() != 1 or z[d, :, o].sum() != 1:
            raise RouterError(f"depot degree violated for vehicle {vid}")
        cycles, chains = _extract_structures(edge_list, o)
        trunk = None
        for cyc in cycles:
            if o in cyc:
                if trunk is not None:
                    raise RouterError(f"multiple depot cycles for vehicle {vid}")
                r = cyc.index(o)
                trunk = cyc[r:] + cyc[:r]
            else:
                orphans.append((_canonical(cyc), d))
        for chain in chains:
            orphans.append((tuple(chain), d))
        if trunk is None:
            raise RouterError(f"no depot cycle for vehicle {vid}")
        trunks[d] = trunk + [o]

    # cheapest insertion of each orphan into some trunk
    for orphan, _src in sorted(orphans, key=lambda oc: (oc[0], oc[1])):
        m = len(orphan)
        best = None  # (added_cost, d, position, rotation)
        for d in range(n_veh):
            w = g.weights[d]
            trunk = trunks[d]
            for pos in range(len(trunk) - 1):
                u, v = trunk[pos], trunk[pos + 1]
                for rot in range(m):
                    path = [orphan[(rot + t) % m] for t in range(m)]
                    added = w[u, path[0]] + w[path[-1], v] - w[u, v]
                    added += sum(w[path[t], path[t + 1]] for t in range(m - 1))
                    cand = (float(added), d, pos, rot)
                    if best is None or cand < best:
                        best = cand
        _, d, pos, rot = best
        path = [orphan[(rot + t) % m] for t in range(m)]
        trunks[d] = trunks[d][: pos + 1] + path + trunks[d][pos + 1 :]

    covered = {int(t) for t in g.task_indices if z[:, :, t].sum() >= 1}

    routes: List[VehicleRoute] = []
    total_cost = 0.0
    for d, vid in enumerate(g.vehicle_ids):
        o = g.depot_idx[vid]
        seen = set()
        simple = []
        for node in trunks[d][:-1]:
            if node not in seen:
                seen.add(node)
                simple.append(node)
        simple.append(o)
        cost = float(sum(g.weights[d, simple[t], simple[t + 1]] for t in range(len(simple) - 1)))
        total_cost += cost
        vehicle = cfg.vehicles[d]
        visits, home_arrive, home_pos = _timed_route(vehicle, simple, g, cfg)
        routes.append(
            VehicleRoute(
                vehicle=vid,
                cycle=tuple(simple),
                visits=visits,
                home_pos=home_pos,
                home_arrive_k=home_arrive,
            )
        )

    plan_covered = frozenset(covered)
    visited_tasks = {v.node for r in routes for v in r.visits if v.kind != "depot"}
    if not plan_covered <= visited_tasks:
        missing = sorted(plan_covered - visited_tasks)
        raise RouterError(f"repair lost coverage of nodes {missing}")
    return RoutePlan(routes=tuple(routes), cost=total_cost, covered=plan_covered)


# ---------------------------------------------------------------------------
# seed trajectories

@dataclass
class SeedResult:
    trajectories: Dict[int, Trajectory]
    plan: RoutePlan


def seed_trajectories(plan: RoutePlan, cfg: MissionConfig) -> SeedResult:
    """Dynamically exact hold-and-go trajectories following the route plan.

    Legs use the rest-to-rest ramp profile at 70% of the per-axis limits,
    dwells hold position for the full inspection window, and each vehicle
    parks at its home box center through the end of the horizon.  Raises
    :class:`HorizonTooShort` with the minimal feasible TN if the plan does
    not fit.
    """
    n = cfg.n_samples
    worst = 0
    for route in plan.routes:
        worst = max(worst, route.home_arrive_k)
    if worst > n:
        raise HorizonTooShort(min_tn=worst * cfg.ts)

    trajectories: Dict[int, Trajectory] = {}
    for route in plan.routes:
        vehicle = cfg.vehicles[cfg.vehicle_ids().index(route.vehicle)]
        accel = np.zeros((3, n))
        k = 0
        cur = np.asarray(vehicle.depot, dtype=float)
        stops = [(np.asarray(v.pos, dtype=float), v.arrive_k, v.depart_k) for v in route.visits]
        stops.append((np.asarray(route.home_pos, dtype=float), route.home_arrive_k, n))
        for target_pos, arrive, depart in stops:
            n_leg, n1, alpha, u = _leg_profile(vehicle, cur, target_pos, cfg.ts)
            if k + n_leg != arrive:
                raise RouterError("plan timing inconsistent with the leg model")
            if n_leg:
                accel[:, k : k + n1] += alpha * u[:, None]
                accel[:, arrive - n1 : arrive] -= alpha * u[:, None]
            k = depart
            cur = target_pos
        traj = rollout(vehicle, vehicle.depot, (0.0, 0.0, 0.0), accel, cfg.ts)
        trajectories[route.vehicle] = traj
    return SeedResult(trajectories=trajectories, plan=plan)


def plan_routes(cfg: MissionConfig) -> Tuple[RoutingGraph, Optional[EdgeSelection], RoutePlan]:
    """Full routing pipeline; zero-task missions route straight home."""
    g = build_graph(cfg)
    if not g.task_indices:
        routes = []
        for d, vid in enumerate(g.vehicle_ids):
            vehicle = cfg.vehicles[d]
            visits, home_arrive, home_pos = _timed_route(
                vehicle, [g.depot_idx[vid], g.depot_idx[vid]], g, cfg
            )
            routes.append(
                VehicleRoute(
                    vehicle=vid,
                    cycle=(g.depot_idx[vid], g.depot_idx[vid]),
                    visits=visits,
                    home_pos=home_pos,
                    home_arrive_k=home_arrive,
                )
            )
        return g, None, RoutePlan(routes=tuple(routes), cost=0.0, covered=frozenset())
    selection = solve_milp(g)
    plan = repair_subtours(selection.z, g, cfg)
    return g, selection, plan
