"""STL formula AST and boolean semantics over discrete-time multi-vehicle signals.

Formulas are immutable trees built from predicates over vehicle positions,
velocities and pairwise/segment distances, combined with boolean connectives
and sample-indexed temporal windows.  Temporal intervals are pairs of
non-negative sample counts; conversion from seconds happens when a formula is
built or parsed, never during evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple, Union

import numpy as np

__all__ = [
    "AxisBand",
    "PairDistance",
    "SegmentDistanceBand",
    "SpeedBand",
    "Predicate",
    "Formula",
    "Pred",
    "Not",
    "And",
    "Or",
    "Implies",
    "Always",
    "Eventually",
    "Next",
    "Signal",
    "HorizonError",
    "horizon",
    "eval_bool",
    "bool_trace",
    "to_text",
    "iter_nodes",
    "point_segment_distance",
]

AXIS_NAMES = ("x", "y", "z")


class HorizonError(Exception):
    """A temporal window reaches past the end of the signal."""


# ---------------------------------------------------------------------------
# predicates

@dataclass(frozen=True)
class AxisBand:
    """Vehicle coordinate on one axis inside (or, negated, outside) an open interval."""

    vehicle: int
    axis: int  # 1, 2, 3 for x, y, z
    lo: float
    hi: float
    negated: bool = False

    def __post_init__(self):
        if self.axis not in (1, 2, 3):
            raise ValueError(f"axis must be 1, 2 or 3, got {self.axis}")
        if not self.lo < self.hi:
            raise ValueError(f"band requires lo < hi, got ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class PairDistance:
    """Euclidean distance between two vehicles at least ``gamma``."""

    vehicle_a: int
    vehicle_b: int
    gamma: float

    def __post_init__(self):
        if self.vehicle_a == self.vehicle_b:
            raise ValueError("pair distance needs two distinct vehicles")
        if self.gamma < 0:
            raise ValueError("separation threshold must be >= 0")


@dataclass(frozen=True)
class SegmentDistanceBand:
    """Distance from a vehicle to a 3-D line segment within ``center +- halfwidth``."""

    vehicle: int
    segment: str
    center: float
    halfwidth: float
    seg_a: Tuple[float, float, float]
    seg_b: Tuple[float, float, float]

    def __post_init__(self):
        if self.halfwidth <= 0:
            raise ValueError("halfwidth must be > 0")
        if self.center < 0:
            raise ValueError("center distance must be >= 0")


@dataclass(frozen=True)
class SpeedBand:
    """Vehicle speed magnitude inside an open interval."""

    vehicle: int
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"band requires lo < hi, got ({self.lo}, {self.hi})")


Predicate = Union[AxisBand, PairDistance, SegmentDistanceBand, SpeedBand]


# ---------------------------------------------------------------------------
# formula nodes
#
# ``label`` is report-only metadata (clause names for diagnostics); it is
# excluded from structural equality so parse/print round-trips compare clean.

class Formula:
    """Base class for AST nodes; use the concrete subclasses below."""

    __slots__ = ()


@dataclass(frozen=True)
class Pred(Formula):
    pred: Predicate
    label: Optional[str] = field(default=None, compare=False)


@dataclass(frozen=True)
class Not(Formula):
    child: Formula
    label: Optional[str] = field(default=None, compare=False)


@dataclass(frozen=True)
class And(Formula):
    children: Tuple[Formula, ...]
    label: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("And requires at least 2 children")


@dataclass(frozen=True)
class Or(Formula):
    children: Tuple[Formula, ...]
    label: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Or requires at least 2 children")


@dataclass(frozen=True)
class Implies(Formula):
    lhs: Formula
    rhs: Formula
    label: Optional[str] = field(default=None, compare=False)


def _check_interval(interval):
    a, b = interval
    if not (isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer))):
        raise ValueError(f"interval bounds must be sample indices, got {interval!r}")
    if not 0 <= a <= b:
        raise ValueError(f"interval must satisfy 0 <= a <= b, got {interval!r}")
    return (int(a), int(b))


@dataclass(frozen=True)
class Always(Formula):
    interval: Tuple[int, int]
    child: Formula
    label: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "interval", _check_interval(self.interval))


@dataclass(frozen=True)
class Eventually(Formula):
    interval: Tuple[int, int]
    child: Formula
    label: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "interval", _check_interval(self.interval))


@dataclass(frozen=True)
class Next(Formula):
    child: Formula
    label: Optional[str] = field(default=None, compare=False)


def iter_nodes(phi: Formula, path: Tuple[int, ...] = ()) -> Iterator[Tuple[Tuple[int, ...], Formula]]:
    """Yield (path, node) pairs in pre-order; paths are child-index tuples."""
    yield path, phi
    for i, child in enumerate(_children(phi)):
        yield from iter_nodes(child, path + (i,))


def _children(phi: Formula) -> Tuple[Formula, ...]:
    if isinstance(phi, Pred):
        return ()
    if isinstance(phi, (Not, Always, Eventually, Next)):
        return (phi.child,)
    if isinstance(phi, (And, Or)):
        return phi.children
    if isinstance(phi, Implies):
        return (phi.lhs, phi.rhs)
    raise TypeError(f"not a formula node: {phi!r}")


# ---------------------------------------------------------------------------
# signals

@dataclass(frozen=True)
class Signal:
    """Sampled positions and velocities for a fleet.

    ``p`` and ``v`` have shape (n_vehicles, 3, n_samples + 1); ``ids`` gives
    the vehicle id carried by each leading row.  Arrays are treated as
    immutable once wrapped.
    """

    p: np.ndarray
    v: np.ndarray
    ts: float
    ids: Tuple[int, ...]

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if p.ndim != 3 or p.shape[1] != 3:
            raise ValueError(f"p must have shape (V, 3, N+1), got {p.shape}")
        if v.shape != p.shape:
            raise ValueError("p and v must have identical shapes")
        if len(self.ids) != p.shape[0]:
            raise ValueError("ids must match the leading dimension of p")
        if self.ts <= 0:
            raise ValueError("sampling period must be > 0")

    @property
    def n_samples(self) -> int:
        """N, the number of sampling intervals (arrays hold N+1 samples)."""
        return self.p.shape[2] - 1

    def row(self, vehicle: int) -> int:
        try:
            return self.ids.index(vehicle)
        except ValueError:
            raise KeyError(f"signal has no vehicle {vehicle}") from None


def point_segment_distance(points: np.ndarray, a, b) -> np.ndarray:
    """Euclidean distance from points (..., 3) to segment a-b, clamped to the endpoints."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    denom = float(d @ d)
    if denom == 0.0:
        raise ValueError("degenerate segment")
    pts = np.asarray(points, dtype=float)
    t = ((pts - a) @ d) / denom
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * d
    return np.linalg.norm(pts - closest, axis=-1)


# ---------------------------------------------------------------------------
# horizon

def horizon(phi: Formula) -> int:
    """Samples needed beyond the evaluation index for the formula to be defined."""
    if isinstance(phi, Pred):
        return 0
    if isinstance(phi, Not):
        return horizon(phi.child)
    if isinstance(phi, (And, Or)):
        return max(horizon(c) for c in phi.children)
    if isinstance(phi, Implies):
        return max(horizon(phi.lhs), horizon(phi.rhs))
    if isinstance(phi, (Always, Eventually)):
        return phi.interval[1] + horizon(phi.child)
    if isinstance(phi, Next):
        return 1 + horizon(phi.child)
    raise TypeError(f"not a formula node: {phi!r}")


# ---------------------------------------------------------------------------
# boolean semantics
#
# Open bands evaluate with strict inequalities; the pair-distance atom is
# non-strict (>=) to match its surface syntax.  Negated bands are the exact
# boolean complement.

def _pred_bool(pred: Predicate, s: Signal) -> np.ndarray:
    if isinstance(pred, AxisBand):
        x = s.p[s.row(pred.vehicle), pred.axis - 1, :]
        inside = (x > pred.lo) & (x < pred.hi)
        return ~inside if pred.negated else inside
    if isinstance(pred, PairDistance):
        dp = s.p[s.row(pred.vehicle_a)] - s.p[s.row(pred.vehicle_b)]
        return np.linalg.norm(dp, axis=0) >= pred.gamma
    if isinstance(pred, SegmentDistanceBand):
        pts = s.p[s.row(pred.vehicle)].T
        d = point_segment_distance(pts, pred.seg_a, pred.seg_b)
        return (d > pred.center - pred.halfwidth) & (d < pred.center + pred.halfwidth)
    if isinstance(pred, SpeedBand):
        sp = np.linalg.norm(s.v[s.row(pred.vehicle)], axis=0)
        return (sp > pred.lo) & (sp < pred.hi)
    raise TypeError(f"unknown predicate {pred!r}")


def _window(arr: np.ndarray, a: int, b: int, reduce_all: bool) -> np.ndarray:
    length = arr.shape[0] - b
    if length <= 0:
        raise HorizonError(
            f"window [{a},{b}] needs {b + 1} samples but only {arr.shape[0]} are defined"
        )
    stack = np.stack([arr[a + i : a + i + length] for i in range(b - a + 1)])
    return stack.all(axis=0) if reduce_all else stack.any(axis=0)


def bool_trace(phi: Formula, s: Signal) -> np.ndarray:
    """Satisfaction of ``phi`` at every index where its horizon fits the signal."""
    if isinstance(phi, Pred):
        return _pred_bool(phi.pred, s)
    if isinstance(phi, Not):
        return ~bool_trace(phi.child, s)
    if isinstance(phi, And):
        traces = [bool_trace(c, s) for c in phi.children]
        n = min(t.shape[0] for t in traces)
        return np.logical_and.reduce([t[:n] for t in traces])
    if isinstance(phi, Or):
        traces = [bool_trace(c, s) for c in phi.children]
        n = min(t.shape[0] for t in traces)
        return np.logical_or.reduce([t[:n] for t in traces])
    if isinstance(phi, Implies):
        lhs, rhs = bool_trace(phi.lhs, s), bool_trace(phi.rhs, s)
        n = min(lhs.shape[0], rhs.shape[0])
        return ~lhs[:n] | rhs[:n]
    if isinstance(phi, Always):
        return _window(bool_trace(phi.child, s), *phi.interval, reduce_all=True)
    if isinstance(phi, Eventually):
        return _window(bool_trace(phi.child, s), *phi.interval, reduce_all=False)
    if isinstance(phi, Next):
        child = bool_trace(phi.child, s)
        if child.shape[0] < 2:
            raise HorizonError("Next needs at least one sample beyond the current index")
        return child[1:]
    raise TypeError(f"not a formula node: {phi!r}")


def eval_bool(phi: Formula, s: Signal, k: int = 0) -> bool:
    """Does ``s`` satisfy ``phi`` at sample index ``k``?"""
    if k < 0:
        raise ValueError("sample index must be >= 0")
    if horizon(phi) + k > s.n_samples:
        raise HorizonError(
            f"formula horizon {horizon(phi)} from index {k} exceeds signal length {s.n_samples}"
        )
    return bool(bool_trace(phi, s)[k])


# ---------------------------------------------------------------------------
# pretty printing (inverse of the parser grammar)

def _fmt_num(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _interval_text(interval: Tuple[int, int], ts: float) -> str:
    a, b = interval
    return f"[{_fmt_num(a * ts)},{_fmt_num(b * ts)}]"


def _atom_text(pred: Predicate) -> str:
    if isinstance(pred, AxisBand):
        core = (
            f"p{pred.vehicle}.{AXIS_NAMES[pred.axis - 1]}"
            f" in ({_fmt_num(pred.lo)}, {_fmt_num(pred.hi)})"
        )
        return f"not ({core})" if pred.negated else core
    if isinstance(pred, PairDistance):
        return f"dist(p{pred.vehicle_a},p{pred.vehicle_b}) >= {_fmt_num(pred.gamma)}"
    if isinstance(pred, SegmentDistanceBand):
        lo = pred.center - pred.halfwidth
        hi = pred.center + pred.halfwidth
        return f"bladedist(p{pred.vehicle},{pred.segment}) in ({_fmt_num(lo)}, {_fmt_num(hi)})"
    if isinstance(pred, SpeedBand):
        return f"speed(p{pred.vehicle}) in ({_fmt_num(pred.lo)}, {_fmt_num(pred.hi)})"
    raise TypeError(f"unknown predicate {pred!r}")


def to_text(phi: Formula, ts: float = 1.0) -> str:
    """Render a formula in the surface grammar; intervals print in seconds.

    Negated axis bands have no atom of their own and render as ``not (...)``,
    so they re-parse as an equivalent Not node rather than an identical one.
    """
    return _print_formula(phi, ts)


def _print_formula(phi: Formula, ts: float) -> str:
    if isinstance(phi, Or):
        parts = [_print_formula(phi.children[0], ts)]
        parts += [_print_term(c, ts) for c in phi.children[1:]]
        return " or ".join(parts)
    if isinstance(phi, Implies):
        return f"{_print_formula(phi.lhs, ts)} -> {_print_term(phi.rhs, ts)}"
    return _print_term(phi, ts)


def _print_term(phi: Formula, ts: float) -> str:
    if isinstance(phi, (Or, Implies)):
        return f"({_print_formula(phi, ts)})"
    if isinstance(phi, And):
        parts = [_print_factor(c, ts) for c in phi.children]
        return " and ".join(parts)
    return _print_factor(phi, ts)


def _print_factor(phi: Formula, ts: float) -> str:
    if isinstance(phi, Pred):
        return _atom_text(phi.pred)
    if isinstance(phi, Not):
        return f"not {_print_factor(phi.child, ts)}"
    if isinstance(phi, Always):
        return f"G{_interval_text(phi.interval, ts)} {_print_factor(phi.child, ts)}"
    if isinstance(phi, Eventually):
        return f"F{_interval_text(phi.interval, ts)} {_print_factor(phi.child, ts)}"
    if isinstance(phi, Next):
        return f"X {_print_factor(phi.child, ts)}"
    return f"({_print_formula(phi, ts)})"
