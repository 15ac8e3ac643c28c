"""Smooth-robustness maximization over acceleration sequences.

The decision variables are the stacked per-vehicle, per-axis accelerations;
positions and velocities are eliminated by rolling the double integrator out
from the seed's start states, which satisfies the dynamics exactly by
construction.  Projected gradient ascent with Armijo backtracking maximizes
the smoothed robustness minus a quadratic penalty on velocity-bound
violations, with a sharpness continuation that doubles beta up to the
configured value.  The iterate returned is the best one seen measured by
exact (not smoothed) robustness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import Trajectory, rollout, CONSISTENCY_TOL
from .formula import Formula, Signal
from .mission import MissionConfig
from .robustness import grad_rho_smooth, rho_smooth_trace, rho_trace, evaluate

__all__ = [
    "SolveOutcome",
    "IterationRecord",
    "SeedInconsistent",
    "optimize",
    "objective_and_gradient",
    "signal_from_trajectories",
    "PENALTY_WEIGHT",
]

PENALTY_WEIGHT = 10.0
_GRAD_TOL = 1e-6
_STALL_TOL = 1e-9
_STALL_SPAN = 10
_ARMIJO_C = 1e-4
_MIN_STEP = 1e-12


class SeedInconsistent(Exception):
    """Seed trajectories do not satisfy the double-integrator recursion."""


class NonFiniteObjective(Exception):
    """The objective degenerated; carries the offending subformula path."""


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    beta: float
    rho_exact: float
    rho_smooth: float
    grad_norm: float
    step: float


@dataclass
class SolveOutcome:
    trajectories: Dict[int, Trajectory]
    rho_exact: float
    rho_smooth: float
    zeta_satisfied: bool
    iterations: int
    reason: str  # "converged" | "stalled" | "iteration-limit"
    velocity_violations: int
    log: List[IterationRecord] = field(default_factory=list)


def signal_from_trajectories(trajs: Dict[int, Trajectory], cfg: MissionConfig) -> Signal:
    ids = cfg.vehicle_ids()
    p = np.stack([trajs[v].p for v in ids])
    v = np.stack([trajs[v].v for v in ids])
    return Signal(p=p, v=v, ts=cfg.ts, ids=ids)


def _signal_from_rollout(x: np.ndarray, starts, cfg: MissionConfig) -> Tuple[Signal, list]:
    trajs = []
    ids = cfg.vehicle_ids()
    for vi, vehicle in enumerate(cfg.vehicles):
        p0, v0 = starts[vi]
        trajs.append(rollout(vehicle, p0, v0, x[vi], cfg.ts))
    p = np.stack([t.p for t in trajs])
    v = np.stack([t.v for t in trajs])
    return Signal(p=p, v=v, ts=cfg.ts, ids=ids), trajs


def _velocity_penalty(sig: Signal, cfg: MissionConfig, weight: float) -> Tuple[float, np.ndarray]:
    """Quadratic exact penalty on velocity-bound violations and its dv."""
    pen = 0.0
    dv = np.zeros_like(sig.v)
    for vi, vehicle in enumerate(cfg.vehicles):
        v = sig.v[vi]
        hi = np.maximum(0.0, v - np.asarray(vehicle.v_max)[:, None])
        lo = np.maximum(0.0, np.asarray(vehicle.v_min)[:, None] - v)
        pen += float(np.sum(hi * hi) + np.sum(lo * lo))
        dv[vi] = -2.0 * hi + 2.0 * lo
    return weight * pen, weight * dv


def _accel_grad_from_state_grad(dp: np.ndarray, dv: np.ndarray, ts: float) -> np.ndarray:
    """Chain rule through the rollout: dp_m/da_k = (m-k-1/2)Ts^2, dv_m/da_k = Ts."""
    n = dp.shape[-1] - 1
    tail_p = dp[..., 1:]
    m_idx = np.arange(1, n + 1, dtype=float)
    s1 = np.cumsum(tail_p[..., ::-1], axis=-1)[..., ::-1]
    s2 = np.cumsum((tail_p * m_idx)[..., ::-1], axis=-1)[..., ::-1]
    sv = np.cumsum(dv[..., 1:][..., ::-1], axis=-1)[..., ::-1]
    k_idx = np.arange(n, dtype=float)
    return ts * ts * (s2 - (k_idx + 0.5) * s1) + ts * sv


def objective_and_gradient(
    cfg: MissionConfig,
    phi: Formula,
    x: np.ndarray,
    starts: Sequence[Tuple[np.ndarray, np.ndarray]],
    beta: float,
    penalty_weight: float = PENALTY_WEIGHT,
) -> Tuple[float, np.ndarray]:
    """Smooth robustness minus velocity penalty, with its exact gradient in x."""
    sig, _ = _signal_from_rollout(x, starts, cfg)
    value = float(rho_smooth_trace(phi, sig, beta)[0])
    pen, pen_dv = _velocity_penalty(sig, cfg, penalty_weight)
    value -= pen
    grad = grad_rho_smooth(phi, sig, 0, beta)
    dv = grad.dv + pen_dv
    ga = _accel_grad_from_state_grad(grad.dp, dv, cfg.ts)
    if not np.isfinite(value) or not np.all(np.isfinite(ga)):
        _raise_non_finite(cfg, phi, sig)
    return value, ga


def _objective_only(cfg, phi, x, starts, beta, penalty_weight=PENALTY_WEIGHT) -> float:
    sig, _ = _signal_from_rollout(x, starts, cfg)
    value = float(rho_smooth_trace(phi, sig, beta)[0])
    pen, _ = _velocity_penalty(sig, cfg, penalty_weight)
    return value - pen


def _raise_non_finite(cfg, phi, sig):
    report = evaluate(phi, sig, beta=max(cfg.beta, 1e-6))
    for path, val in report.per_subformula.items():
        if not np.isfinite(val):
            raise NonFiniteObjective(f"subformula {path} produced a non-finite value")
    raise NonFiniteObjective("objective non-finite but every subformula is finite")


def _project(x: np.ndarray, cfg: MissionConfig) -> np.ndarray:
    out = x.copy()
    for vi, vehicle in enumerate(cfg.vehicles):
        lo = np.asarray(vehicle.a_min)[:, None]
        hi = np.asarray(vehicle.a_max)[:, None]
        out[vi] = np.clip(out[vi], lo, hi)
    return out


def _beta_schedule(beta: float) -> List[float]:
    return [beta / 8.0, beta / 4.0, beta / 2.0, beta]


def optimize(
    cfg: MissionConfig,
    phi: Formula,
    seed: Dict[int, Trajectory],
    max_iters: int = 5000,
    multi_start: int = 1,
    rng_seed: int = 0,
    penalty_weight: float = PENALTY_WEIGHT,
) -> SolveOutcome:
    """Refine seed trajectories by projected gradient ascent on smooth robustness.

    Never returns an iterate whose exact robustness is below the (projected)
    seed's; accelerations in the outcome respect the box bounds exactly.
    """
    ids = cfg.vehicle_ids()
    for vid in ids:
        if vid not in seed:
            raise SeedInconsistent(f"seed missing vehicle {vid}")
        err = seed[vid].consistency_error()
        if err > CONSISTENCY_TOL:
            raise SeedInconsistent(f"vehicle {vid} seed recursion defect {err:.3e}")

    starts = []
    for vi, vid in enumerate(ids):
        t = seed[vid]
        starts.append((t.p[:, 0].copy(), t.v[:, 0].copy()))
    x_seed = np.stack([seed[vid].a for vid in ids])
    x_seed = _project(x_seed, cfg)

    rng = np.random.default_rng(rng_seed)
    start_points = [x_seed]
    for _ in range(max(0, multi_start - 1)):
        scale = np.stack(
            [
                0.1 * (np.asarray(v.a_max) - np.asarray(v.a_min))[:, None] * np.ones((3, x_seed.shape[2]))
                for v in cfg.vehicles
            ]
        )
        start_points.append(_project(x_seed + rng.normal(0.0, 1.0, x_seed.shape) * scale, cfg))

    best_overall: Optional[Tuple[float, np.ndarray]] = None
    log: List[IterationRecord] = []
    iterations = 0
    reason = "converged"

    def exact_rho(x: np.ndarray) -> float:
        sig, _ = _signal_from_rollout(x, starts, cfg)
        return float(rho_trace(phi, sig)[0])

    for x0 in start_points:
        x = x0
        best_rho = exact_rho(x)
        best_x = x
        schedule = _beta_schedule(cfg.beta)
        budget = max(1, max_iters // len(schedule))
        last_step = 1.0
        for stage, beta in enumerate(schedule):
            recent: List[float] = []
            stage_iter = 0
            # the final sharpness gets whatever budget earlier stages left over
            stage_budget = budget if stage < len(schedule) - 1 else max_iters
            while stage_iter < stage_budget and iterations < max_iters:
                value, grad = objective_and_gradient(cfg, phi, x, starts, beta, penalty_weight)
                gnorm = float(np.abs(grad).max()) if grad.size else 0.0
                if gnorm < _GRAD_TOL:
                    reason = "converged"
                    break
                # warm-start the backtracking near the last accepted step; the
                # scheme's initial trial stays 1.0
                step = min(1.0, 4.0 * last_step)
                new_x = None
                new_value = None
                while step >= _MIN_STEP:
                    cand = _project(x + step * grad, cfg)
                    gain = float(np.sum(grad * (cand - x)))
                    if gain <= 0.0:
                        break
                    cand_value = _objective_only(cfg, phi, cand, starts, beta, penalty_weight)
                    if cand_value >= value + _ARMIJO_C * gain:
                        new_x, new_value = cand, cand_value
                        last_step = step
                        break
                    step *= 0.5
                iterations += 1
                stage_iter += 1
                if new_x is None:
                    log.append(IterationRecord(iterations, beta, best_rho, value, gnorm, 0.0))
                    reason = "stalled"
                    break
                x = new_x
                r = exact_rho(x)
                if r > best_rho:
                    best_rho = r
                    best_x = x
                log.append(IterationRecord(iterations, beta, r, new_value, gnorm, step))
                recent.append(new_value)
                if len(recent) > _STALL_SPAN:
                    recent.pop(0)
                    if abs(recent[-1] - recent[0]) < _STALL_TOL:
                        reason = "stalled"
                        break
            if iterations >= max_iters:
                reason = "iteration-limit"
                break
        if best_overall is None or best_rho > best_overall[0]:
            best_overall = (best_rho, best_x)

    best_rho, best_x = best_overall
    sig, trajs = _signal_from_rollout(best_x, starts, cfg)
    rho_s = float(rho_smooth_trace(phi, sig, cfg.beta)[0])
    violations = 0
    for vi, vehicle in enumerate(cfg.vehicles):
        v = sig.v[vi]
        violations += int(np.sum(v > np.asarray(vehicle.v_max)[:, None] + 1e-12))
        violations += int(np.sum(v < np.asarray(vehicle.v_min)[:, None] - 1e-12))

    out_trajs = {vid: trajs[vi] for vi, vid in enumerate(ids)}
    return SolveOutcome(
        trajectories=out_trajs,
        rho_exact=best_rho,
        rho_smooth=rho_s,
        zeta_satisfied=rho_s >= cfg.zeta,
        iterations=iterations,
        reason=reason,
        velocity_violations=violations,
        log=log,
    )
