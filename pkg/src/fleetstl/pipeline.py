"""End-to-end planning pipeline: validate, route, seed, optimize."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

from .formula import Formula
from .mission import MissionConfig, ValidationIssue, build_formula, validate
from .optimizer import SolveOutcome, optimize
from .router import (
    EdgeSelection,
    RoutePlan,
    RoutingGraph,
    SeedResult,
    plan_routes,
    seed_trajectories,
)

__all__ = ["MissionPlan", "InvalidMission", "plan_mission"]


class InvalidMission(Exception):
    """Config failed validation; carries the issue list."""

    def __init__(self, issues: List[ValidationIssue]):
        self.issues = issues
        lines = "; ".join(f"{i.code}({i.where})" for i in issues)
        super().__init__(f"invalid mission config: {lines}")


@dataclass
class MissionPlan:
    cfg: MissionConfig
    formula: Formula
    graph: RoutingGraph
    selection: Optional[EdgeSelection]
    route_plan: RoutePlan
    seed: SeedResult
    outcome: SolveOutcome

    @property
    def trajectories(self) -> Dict[int, "Trajectory"]:  # noqa: F821 - final plan states
        return self.outcome.trajectories


def plan_mission(
    cfg: MissionConfig,
    max_iters: int = 5000,
    multi_start: int = 1,
    rng_seed: int = 0,
    check_config: bool = True,
) -> MissionPlan:
    """Route, seed and optimize a mission.

    Raises :class:`InvalidMission` when validation fails and
    :class:`fleetstl.router.HorizonTooShort` when the horizon cannot fit the
    seed routes.
    """
    if check_config:
        issues = validate(cfg)
        if issues:
            raise InvalidMission(issues)
    phi = build_formula(cfg)
    graph, selection, route_plan = plan_routes(cfg)
    seed = seed_trajectories(route_plan, cfg)
    outcome = optimize(
        cfg,
        phi,
        seed.trajectories,
        max_iters=max_iters,
        multi_start=multi_start,
        rng_seed=rng_seed,
    )
    return MissionPlan(
        cfg=cfg,
        formula=phi,
        graph=graph,
        selection=selection,
        route_plan=route_plan,
        seed=seed,
        outcome=outcome,
    )
