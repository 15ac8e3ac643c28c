"""Per-axis double-integrator motion primitives and feasibility checks.

Acceleration is held constant over each sampling interval, so states follow

    p[k+1] = p[k] + v[k]*Ts + 0.5*a[k]*Ts^2
    v[k+1] = v[k] + a[k]*Ts

exactly.  Trajectories are produced by rolling accelerations out from a start
state; bound violations are reported, never silently clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

__all__ = [
    "VehicleSpec",
    "Trajectory",
    "BoundViolation",
    "TrajectoryInconsistent",
    "rollout",
    "check_feasible",
    "time_grid",
    "CONSISTENCY_TOL",
]

CONSISTENCY_TOL = 1e-9


class TrajectoryInconsistent(Exception):
    """State sequences do not satisfy the double-integrator recursion."""


@dataclass(frozen=True)
class VehicleSpec:
    """Vehicle identity, start point and per-axis kinematic limits."""

    id: int
    depot: Tuple[float, float, float]
    v_min: Tuple[float, float, float]
    v_max: Tuple[float, float, float]
    a_min: Tuple[float, float, float]
    a_max: Tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "depot", tuple(float(x) for x in self.depot))
        object.__setattr__(self, "v_min", tuple(float(x) for x in self.v_min))
        object.__setattr__(self, "v_max", tuple(float(x) for x in self.v_max))
        object.__setattr__(self, "a_min", tuple(float(x) for x in self.a_min))
        object.__setattr__(self, "a_max", tuple(float(x) for x in self.a_max))
        for j in range(3):
            if not (self.v_min[j] < 0 < self.v_max[j]):
                raise ValueError(f"velocity bounds on axis {j} must straddle 0")
            if not (self.a_min[j] < 0 < self.a_max[j]):
                raise ValueError(f"acceleration bounds on axis {j} must straddle 0")
        for bound in (self.v_min, self.v_max, self.a_min, self.a_max, self.depot):
            if not all(np.isfinite(bound)):
                raise ValueError("vehicle bounds and depot must be finite")

    @property
    def top_speed(self) -> float:
        """Infinity norm of the upper velocity bounds; used for edge weights."""
        return max(self.v_max)


@dataclass
class Trajectory:
    """Sampled states (N+1) and inputs (N) of one vehicle."""

    vehicle: int
    p: np.ndarray  # (3, N+1)
    v: np.ndarray  # (3, N+1)
    a: np.ndarray  # (3, N)
    ts: float

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        if self.p.shape != self.v.shape or self.p.ndim != 2 or self.p.shape[0] != 3:
            raise ValueError("p and v must both have shape (3, N+1)")
        if self.a.shape != (3, self.p.shape[1] - 1):
            raise ValueError("a must have shape (3, N)")
        if self.ts <= 0:
            raise ValueError("sampling period must be > 0")

    @property
    def n_samples(self) -> int:
        return self.p.shape[1] - 1

    def consistency_error(self) -> float:
        """Largest absolute defect of the double-integrator recursion."""
        ts = self.ts
        p_err = self.p[:, 1:] - (self.p[:, :-1] + self.v[:, :-1] * ts + 0.5 * self.a * ts * ts)
        v_err = self.v[:, 1:] - (self.v[:, :-1] + self.a * ts)
        if p_err.size == 0:
            return 0.0
        return float(max(np.abs(p_err).max(), np.abs(v_err).max()))


@dataclass(frozen=True)
class BoundViolation:
    k: int
    axis: int  # 1, 2, 3
    quantity: str  # "v" or "a"
    magnitude: float


def rollout(spec: VehicleSpec, start_p, start_v, accels: np.ndarray, ts: float) -> Trajectory:
    """Integrate accelerations from a start state.  No clamping is applied."""
    if ts <= 0:
        raise ValueError("sampling period must be > 0")
    a = np.asarray(accels, dtype=float)
    if a.ndim != 2 or a.shape[0] != 3:
        raise ValueError(f"accels must have shape (3, N), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("accelerations must be finite")
    n = a.shape[1]
    p0 = np.asarray(start_p, dtype=float).reshape(3, 1)
    v0 = np.asarray(start_v, dtype=float).reshape(3, 1)
    v = np.concatenate([v0, v0 + ts * np.cumsum(a, axis=1)], axis=1)
    steps = v[:, :-1] * ts + 0.5 * a * ts * ts
    p = np.concatenate([p0, p0 + np.cumsum(steps, axis=1)], axis=1)
    return Trajectory(vehicle=spec.id, p=p, v=v, a=a, ts=ts)


def check_feasible(traj: Trajectory, spec: VehicleSpec) -> List[BoundViolation]:
    """Every (sample, axis) where a velocity or acceleration bound is breached.

    Raises :class:`TrajectoryInconsistent` when the state sequences do not
    follow from the inputs, since bound checks on inconsistent data are
    meaningless.
    """
    err = traj.consistency_error()
    if err > CONSISTENCY_TOL:
        raise TrajectoryInconsistent(f"recursion defect {err:.3e} exceeds {CONSISTENCY_TOL:.0e}")
    out: List[BoundViolation] = []
    for j in range(3):
        for k, val in enumerate(traj.v[j]):
            if val > spec.v_max[j]:
                out.append(BoundViolation(k, j + 1, "v", float(val - spec.v_max[j])))
            elif val < spec.v_min[j]:
                out.append(BoundViolation(k, j + 1, "v", float(spec.v_min[j] - val)))
        for k, val in enumerate(traj.a[j]):
            if val > spec.a_max[j]:
                out.append(BoundViolation(k, j + 1, "a", float(val - spec.a_max[j])))
            elif val < spec.a_min[j]:
                out.append(BoundViolation(k, j + 1, "a", float(spec.a_min[j] - val)))
    out.sort(key=lambda bv: (bv.k, bv.axis, bv.quantity))
    return out


def time_grid(tn: float, ts: float) -> Tuple[int, np.ndarray]:
    """Sample count and time vector for a horizon of ``tn`` seconds.

    N = round(tn/ts) with halves rounding up, so tn=0.9, ts=0.5 gives N=2.
    """
    if ts <= 0:
        raise ValueError("sampling period must be > 0")
    if tn < ts:
        raise ValueError("horizon must be at least one sampling period")
    n = int(np.floor(tn / ts + 0.5))
    return n, np.arange(n + 1) * ts
