"""Shared fixtures: a toy two-vehicle mission and random formula/signal generators."""

from __future__ import annotations

import numpy as np
import pytest

from fleetstl.formula import (
    And,
    Always,
    AxisBand,
    Eventually,
    Implies,
    Next,
    Not,
    Or,
    PairDistance,
    Pred,
    SegmentDistanceBand,
    Signal,
    SpeedBand,
    horizon,
)
from fleetstl.mission import config_from_dict


TOY_MISSION = {
    "workspace": {"lo": [-10, -10, 0], "hi": [10, 10, 8]},
    "obstacles": [{"lo": [-1, -1, 0], "hi": [1, 1, 5]}],
    "targets": [
        {"lo": [4, 3, 1], "hi": [6, 5, 3]},
        {"lo": [-6, -5, 1], "hi": [-4, -3, 3]},
    ],
    "blades": [
        {"box": {"lo": [2, -6, 1], "hi": [6, -2, 5]}, "a": [4, -4, 1.5], "b": [4, -4, 4.5]}
    ],
    "homes": [
        {"lo": [-8.6, 5.4, 1.9], "hi": [-7.4, 6.6, 3.1]},
        {"lo": [7.4, 5.4, 1.9], "hi": [8.6, 6.6, 3.1]},
    ],
    "vehicles": [
        {
            "depot": [-8, 6, 0.5],
            "v_min": [-2, -2, -1.5],
            "v_max": [2, 2, 1.5],
            "a_min": [-1.5, -1.5, -1],
            "a_max": [1.5, 1.5, 1],
        },
        {
            "depot": [8, 6, 0.5],
            "v_min": [-2, -2, -1.5],
            "v_max": [2, 2, 1.5],
            "a_min": [-1.5, -1.5, -1],
            "a_max": [1.5, 1.5, 1],
        },
    ],
    "timing": {"TN": 60, "Tins": 3, "Tbla": 3, "Ts": 0.5},
    "params": {"gamma_dis": 1.0, "gamma_bla": 1.2, "eps": 0.8, "zeta": 0.0, "beta": 64.0},
}


def toy_mission_doc() -> dict:
    import copy

    return copy.deepcopy(TOY_MISSION)


@pytest.fixture
def toy_cfg():
    return config_from_dict(toy_mission_doc())


# ---------------------------------------------------------------------------
# random generators (plain numpy RNG; reused by the acceptance suite)

def random_signal(rng: np.random.Generator, n_vehicles: int, n: int, ts: float = 0.5) -> Signal:
    """Smooth-ish random signal: integrated random accelerations around the origin."""
    p = np.empty((n_vehicles, 3, n + 1))
    v = np.empty((n_vehicles, 3, n + 1))
    for vi in range(n_vehicles):
        a = rng.uniform(-2.0, 2.0, size=(3, n))
        vel = np.concatenate([rng.uniform(-1, 1, (3, 1)), np.cumsum(a * ts, axis=1)], axis=1)
        start = rng.uniform(-4, 4, (3, 1))
        steps = vel[:, :-1] * ts + 0.5 * a * ts * ts
        p[vi] = np.concatenate([start, start + np.cumsum(steps, axis=1)], axis=1)
        v[vi] = vel
    return Signal(p=p, v=v, ts=ts, ids=tuple(range(1, n_vehicles + 1)))


def random_predicate(rng: np.random.Generator, ids) -> Pred:
    kinds = ["axis", "axis", "pair", "segment", "speed"]
    kind = kinds[rng.integers(len(kinds))]
    vid = int(rng.choice(ids))
    if kind == "pair" and len(ids) < 2:
        kind = "axis"
    if kind == "axis":
        lo = float(rng.uniform(-4, 2))
        return Pred(
            AxisBand(
                vid,
                int(rng.integers(1, 4)),
                lo,
                lo + float(rng.uniform(0.5, 5)),
                negated=bool(rng.random() < 0.3),
            )
        )
    if kind == "pair":
        a, b = sorted(rng.choice(ids, size=2, replace=False).tolist())
        return Pred(PairDistance(int(a), int(b), float(rng.uniform(0.2, 3))))
    if kind == "segment":
        a = rng.uniform(-3, 3, 3)
        b = a + rng.uniform(0.5, 3, 3)
        return Pred(
            SegmentDistanceBand(
                vid,
                "b1",
                center=float(rng.uniform(0.5, 2.5)),
                halfwidth=float(rng.uniform(0.3, 1.5)),
                seg_a=tuple(a),
                seg_b=tuple(b),
            )
        )
    lo = float(rng.uniform(0, 1.0))
    return Pred(SpeedBand(vid, lo, lo + float(rng.uniform(0.5, 2))))


def random_formula(rng: np.random.Generator, ids, budget: int, depth: int = 3):
    """Random AST whose horizon never exceeds ``budget``."""
    if depth <= 0 or budget <= 0 or rng.random() < 0.25:
        return random_predicate(rng, ids)
    op = rng.integers(6)
    if op == 0:
        return Not(random_formula(rng, ids, budget, depth - 1))
    if op == 1:
        k = int(rng.integers(2, 4))
        return And(tuple(random_formula(rng, ids, budget, depth - 1) for _ in range(k)))
    if op == 2:
        k = int(rng.integers(2, 4))
        return Or(tuple(random_formula(rng, ids, budget, depth - 1) for _ in range(k)))
    if op == 3:
        return Implies(
            random_formula(rng, ids, budget, depth - 1),
            random_formula(rng, ids, budget, depth - 1),
        )
    if op == 4:
        child = random_formula(rng, ids, max(0, budget - 1), depth - 1)
        return Next(child) if horizon(child) + 1 <= budget else child
    a = int(rng.integers(0, 3))
    b = a + int(rng.integers(0, 4))
    child = random_formula(rng, ids, max(0, budget - b), depth - 1)
    if b + horizon(child) > budget:
        return child if horizon(child) <= budget else random_predicate(rng, ids)
    cls = Always if rng.random() < 0.5 else Eventually
    return cls((a, b), child)
