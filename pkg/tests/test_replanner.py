import numpy as np
import pytest

from fleetstl.mission import config_from_dict
from fleetstl.pipeline import plan_mission
from fleetstl.replanner import (
    Event,
    EventScriptError,
    ExecutionState,
    ResidualInfeasible,
    execute_with_replanning,
    load_events,
    replan,
    should_replan,
    simulate,
    task_keys,
)

from conftest import toy_mission_doc


@pytest.fixture(scope="module")
def toy_plan():
    cfg = config_from_dict(toy_mission_doc())
    plan = plan_mission(cfg, max_iters=600)
    return cfg, plan


class TestEvents:
    def test_load_script(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text(
            "# disturbances\n"
            "4,DELAY,1,3.5\n"
            "9,DROPOUT,2\n"
            "2,DEVIATION,1,0.5,0,-0.25\n"
        )
        events = load_events(path)
        assert [e.kind for e in events] == ["DEVIATION", "DELAY", "DROPOUT"]
        assert events[1].delay_s == 3.5
        assert events[0].offset == (0.5, 0.0, -0.25)

    def test_bad_kind_rejected(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("1,EXPLODE,1\n")
        with pytest.raises(EventScriptError):
            load_events(path)

    def test_delay_needs_duration(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("1,DELAY,1\n")
        with pytest.raises(EventScriptError):
            load_events(path)


class TestSimulate:
    def test_no_events_identity(self, toy_plan):
        cfg, plan = toy_plan
        res = simulate(plan.outcome.trajectories, [], cfg)
        ids = cfg.vehicle_ids()
        for vi, vid in enumerate(ids):
            assert np.allclose(res.positions[vi], plan.outcome.trajectories[vid].p)
        assert set(res.completed_at) == set(task_keys(cfg))

    def test_delay_shifts_completion(self, toy_plan):
        cfg, plan = toy_plan
        base = simulate(plan.outcome.trajectories, [], cfg)
        # delay the vehicle that certifies t1, injected right before its visit
        key = "t1"
        base_k = base.completed_at[key]
        candidates = []
        box = cfg.targets[0]
        for vi, vid in enumerate(cfg.vehicle_ids()):
            if box.contains(base.positions[vi, :, base_k]):
                candidates.append(vid)
        vid = candidates[0]
        hold_s = cfg.t_ins + cfg.ts
        events = [Event(trigger_k=max(0, base_k - 12), kind="DELAY", vehicle=vid, delay_s=hold_s)]
        res = simulate(plan.outcome.trajectories, events, cfg)
        assert key not in res.completed_at or res.completed_at[key] > base_k

    def test_dropout_removes_vehicle(self, toy_plan):
        cfg, plan = toy_plan
        res = simulate(plan.outcome.trajectories, [Event(0, "DROPOUT", 2)], cfg)
        assert res.active_until[2] == 0
        assert np.all(np.isnan(res.positions[1]))
        assert np.all(np.isfinite(res.positions[0]))

    def test_out_of_horizon_event_warns(self, toy_plan):
        cfg, plan = toy_plan
        res = simulate(
            plan.outcome.trajectories, [Event(cfg.n_samples + 50, "DROPOUT", 1)], cfg
        )
        assert any("beyond horizon" in w for w in res.warnings)
        assert res.active_until[1] > cfg.n_samples


class TestShouldReplan:
    def _state(self, cfg, plan, k=0, **overrides):
        trajs = plan.outcome.trajectories
        positions = {vid: trajs[vid].p[:, k].copy() for vid in cfg.vehicle_ids()}
        velocities = {vid: trajs[vid].v[:, k].copy() for vid in cfg.vehicle_ids()}
        state = dict(
            k=k,
            positions=positions,
            velocities=velocities,
            completed=frozenset(),
            active=frozenset(cfg.vehicle_ids()),
        )
        state.update(overrides)
        return ExecutionState(**state)

    def test_no_trigger_on_plan(self, toy_plan):
        cfg, plan = toy_plan
        state = self._state(cfg, plan, k=0)
        decision = should_replan(state, plan.outcome.trajectories, plan.route_plan, cfg)
        assert decision.trigger is False

    def test_deviation_triggers(self, toy_plan):
        cfg, plan = toy_plan
        state = self._state(cfg, plan, k=5)
        state.positions[1][0] += cfg.gamma_dis  # a full gamma: above the half threshold
        decision = should_replan(state, plan.outcome.trajectories, plan.route_plan, cfg)
        assert decision.trigger
        assert any(r.startswith("deviation[p1]") for r in decision.reasons)

    def test_dropout_without_tasks_does_not_trigger(self, toy_plan):
        cfg, plan = toy_plan
        state = self._state(
            cfg,
            plan,
            k=2,
            active=frozenset({1}),
            completed=frozenset(task_keys(cfg)),
        )
        state.positions.pop(2, None)
        decision = should_replan(state, plan.outcome.trajectories, plan.route_plan, cfg)
        assert not any(r.startswith("dropout") for r in decision.reasons)

    def test_dropout_with_pending_tasks_triggers(self, toy_plan):
        cfg, plan = toy_plan
        owner = None
        for route in plan.route_plan.routes:
            if any(v.kind in ("target", "blade") for v in route.visits):
                owner = route.vehicle
                break
        survivors = frozenset(v for v in cfg.vehicle_ids() if v != owner)
        state = self._state(cfg, plan, k=2, active=survivors)
        state.positions.pop(owner, None)
        decision = should_replan(state, plan.outcome.trajectories, plan.route_plan, cfg)
        assert any(r.startswith(f"dropout[p{owner}]") for r in decision.reasons)

    def test_time_shortfall_triggers(self, toy_plan):
        cfg, plan = toy_plan
        k = cfg.n_samples - 2  # nothing completed, almost no time left
        state = self._state(cfg, plan, k=k)
        decision = should_replan(state, plan.outcome.trajectories, plan.route_plan, cfg)
        assert any(r.startswith("time") for r in decision.reasons)


class TestReplan:
    def test_no_active_vehicles(self, toy_plan):
        cfg, plan = toy_plan
        state = ExecutionState(
            k=5, positions={}, velocities={}, completed=frozenset(), active=frozenset()
        )
        with pytest.raises(ResidualInfeasible):
            replan(state, cfg)

    def test_zero_remaining_tasks_returns_home(self, toy_plan):
        cfg, plan = toy_plan
        trajs = plan.outcome.trajectories
        k = cfg.n_samples // 2
        state = ExecutionState(
            k=k,
            positions={vid: trajs[vid].p[:, k].copy() for vid in cfg.vehicle_ids()},
            velocities={vid: trajs[vid].v[:, k].copy() for vid in cfg.vehicle_ids()},
            completed=frozenset(task_keys(cfg)),
            active=frozenset(cfg.vehicle_ids()),
        )
        new_plan = replan(state, cfg, max_iters=400)
        assert new_plan.cfg.targets == ()
        assert new_plan.cfg.blades == ()
        from fleetstl.optimizer import signal_from_trajectories
        from fleetstl.robustness import labeled_traces

        sig = signal_from_trajectories(new_plan.outcome.trajectories, new_plan.cfg)
        for _, label, arr in labeled_traces(new_plan.formula, sig):
            if label.startswith("home["):
                assert arr.max() > 0  # home eventually satisfied

    def test_replan_at_zero_reproduces_plan(self, toy_plan):
        cfg, plan = toy_plan
        state = ExecutionState(
            k=0,
            positions={v.id: np.asarray(v.depot, dtype=float) for v in cfg.vehicles},
            velocities={v.id: np.zeros(3) for v in cfg.vehicles},
            completed=frozenset(),
            active=frozenset(cfg.vehicle_ids()),
        )
        again = replan(state, cfg, max_iters=600)
        assert again.outcome.rho_exact == pytest.approx(plan.outcome.rho_exact, abs=1e-6)

    def test_dropout_reassigns_tasks(self, toy_plan):
        cfg, plan = toy_plan
        trajs = plan.outcome.trajectories
        survivor = 1
        k = 4
        state = ExecutionState(
            k=k,
            positions={survivor: trajs[survivor].p[:, k].copy()},
            velocities={survivor: trajs[survivor].v[:, k].copy()},
            completed=frozenset(),
            active=frozenset({survivor}),
        )
        new_plan = replan(state, cfg, max_iters=300)
        # coverage forces every remaining task onto the survivor
        route = new_plan.route_plan.route_for(survivor)
        kinds = [(v.kind, v.ref) for v in route.visits if v.kind in ("target", "blade")]
        assert len(kinds) == len(task_keys(cfg))


class TestExecuteWithReplanning:
    def test_no_events_no_replans(self, toy_plan):
        cfg, plan = toy_plan
        execution = execute_with_replanning(cfg, plan, [], max_iters=400)
        assert execution.replans == []
        assert execution.verdict.satisfied
        assert set(execution.completed_at) == set(task_keys(cfg))

    def test_delay_triggers_replan_and_still_satisfies(self, toy_plan):
        cfg, plan = toy_plan
        base = simulate(plan.outcome.trajectories, [], cfg)
        first_key = min(base.completed_at, key=base.completed_at.get)
        base_k = base.completed_at[first_key]
        box_owner = None
        for vi, vid in enumerate(cfg.vehicle_ids()):
            pos = base.positions[vi, :, base_k]
            if np.all(np.isfinite(pos)):
                from fleetstl.replanner import _task_holds

                if _task_holds(cfg, first_key, pos, base.velocities[vi, :, base_k]):
                    box_owner = vid
                    break
        assert box_owner is not None
        events = [
            Event(
                trigger_k=max(1, base_k - 15),
                kind="DELAY",
                vehicle=box_owner,
                delay_s=cfg.t_ins + 2 * cfg.ts,
            )
        ]
        execution = execute_with_replanning(cfg, plan, events, max_iters=400)
        assert len(execution.replans) >= 1
        assert execution.verdict.tasks_ok
        assert execution.verdict.safety_ok
