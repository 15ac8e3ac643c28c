"""Mission configuration and the builder that turns it into one STL formula.

A mission is a workspace box, obstacle boxes, target boxes, blade segments
(each with an enclosing box), one home box and one vehicle spec per vehicle,
plus timing and margin parameters.  ``build_formula`` assembles the full
specification: always-on safety (workspace, obstacle avoidance, pairwise
separation), timed coverage of every target and blade side, return home, and
home being absorbing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import VehicleSpec, time_grid
from .formula import (
    And,
    Always,
    AxisBand,
    Eventually,
    Formula,
    Implies,
    Next,
    Or,
    PairDistance,
    Pred,
    SegmentDistanceBand,
    SpeedBand,
    point_segment_distance,
)
from .parser import BindContext, samples_from_seconds

__all__ = [
    "Box",
    "BladeSegment",
    "MissionConfig",
    "ValidationIssue",
    "ConfigError",
    "load_config",
    "config_from_dict",
    "validate",
    "build_formula",
    "dist_to_segment",
    "bind_context",
]


class ConfigError(Exception):
    """Configuration file is structurally invalid."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; degenerate bounds are reported by validate(), not here."""

    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(x) for x in self.lo))
        object.__setattr__(self, "hi", tuple(float(x) for x in self.hi))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    def contains(self, point, strict: bool = True) -> bool:
        p = np.asarray(point, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        if strict:
            return bool(np.all(p > lo) and np.all(p < hi))
        return bool(np.all(p >= lo) and np.all(p <= hi))

    def intersects(self, other: "Box") -> bool:
        return all(self.lo[j] < other.hi[j] and other.lo[j] < self.hi[j] for j in range(3))

    def degenerate(self) -> bool:
        return any(self.lo[j] >= self.hi[j] for j in range(3))


@dataclass(frozen=True)
class BladeSegment:
    """One blade side: a 3-D scan segment and the box the scan must stay in."""

    sid: int
    a: Tuple[float, float, float]
    b: Tuple[float, float, float]
    box: Box

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))

    @property
    def name(self) -> str:
        return f"b{self.sid}"


@dataclass(frozen=True)
class MissionConfig:
    workspace: Box
    obstacles: Tuple[Box, ...]
    targets: Tuple[Box, ...]
    blades: Tuple[BladeSegment, ...]
    homes: Tuple[Box, ...]
    vehicles: Tuple[VehicleSpec, ...]
    tn: float
    t_ins: float
    t_bla: float
    ts: float
    gamma_dis: float
    gamma_bla: float
    eps: float
    zeta: float
    beta: float
    blade_speed_band: Optional[Tuple[float, float]] = None

    @property
    def delta(self) -> int:
        return len(self.vehicles)

    @property
    def n_samples(self) -> int:
        n, _ = time_grid(self.tn, self.ts)
        return n

    def vehicle_ids(self) -> Tuple[int, ...]:
        return tuple(v.id for v in self.vehicles)


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str
    where: str = ""


# ---------------------------------------------------------------------------
# loading

def _require_keys(obj: dict, required: Sequence[str], optional: Sequence[str], where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")


def _vec3(value, where: str) -> Tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(f"{where}: expected a 3-vector")
    try:
        return tuple(float(x) for x in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: entries must be numbers") from None


def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    return float(value)


def _box(obj, where: str) -> Box:
    _require_keys(obj, ["lo", "hi"], [], where)
    return Box(_vec3(obj["lo"], f"{where}.lo"), _vec3(obj["hi"], f"{where}.hi"))


def config_from_dict(doc: dict) -> MissionConfig:
    """Build a config from parsed JSON; unknown keys are rejected everywhere."""
    _require_keys(
        doc,
        ["workspace", "obstacles", "targets", "blades", "homes", "vehicles", "timing", "params"],
        ["blade_speed_band"],
        "config",
    )
    workspace = _box(doc["workspace"], "workspace")
    obstacles = tuple(_box(b, f"obstacles[{i}]") for i, b in enumerate(doc["obstacles"]))
    targets = tuple(_box(b, f"targets[{i}]") for i, b in enumerate(doc["targets"]))

    blades = []
    for i, item in enumerate(doc["blades"]):
        where = f"blades[{i}]"
        _require_keys(item, ["box", "a", "b"], [], where)
        blades.append(
            BladeSegment(
                sid=i + 1,
                a=_vec3(item["a"], f"{where}.a"),
                b=_vec3(item["b"], f"{where}.b"),
                box=_box(item["box"], f"{where}.box"),
            )
        )

    homes = tuple(_box(b, f"homes[{i}]") for i, b in enumerate(doc["homes"]))

    vehicles = []
    for i, item in enumerate(doc["vehicles"]):
        where = f"vehicles[{i}]"
        _require_keys(item, ["depot", "v_min", "v_max", "a_min", "a_max"], [], where)
        kwargs = dict(
            depot=_vec3(item["depot"], f"{where}.depot"),
            v_min=_vec3(item["v_min"], f"{where}.v_min"),
            v_max=_vec3(item["v_max"], f"{where}.v_max"),
            a_min=_vec3(item["a_min"], f"{where}.a_min"),
            a_max=_vec3(item["a_max"], f"{where}.a_max"),
        )
        try:
            vehicles.append(VehicleSpec(id=i + 1, **kwargs))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None

    timing = doc["timing"]
    _require_keys(timing, ["TN", "Tins", "Tbla", "Ts"], [], "timing")
    params = doc["params"]
    _require_keys(params, ["gamma_dis", "gamma_bla", "eps", "zeta", "beta"], [], "params")

    band = None
    if "blade_speed_band" in doc:
        raw = doc["blade_speed_band"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise ConfigError("blade_speed_band: expected [lo, hi]")
        band = (_num(raw[0], "blade_speed_band[0]"), _num(raw[1], "blade_speed_band[1]"))

    return MissionConfig(
        workspace=workspace,
        obstacles=obstacles,
        targets=targets,
        blades=tuple(blades),
        homes=homes,
        vehicles=tuple(vehicles),
        tn=_num(timing["TN"], "timing.TN"),
        t_ins=_num(timing["Tins"], "timing.Tins"),
        t_bla=_num(timing["Tbla"], "timing.Tbla"),
        ts=_num(timing["Ts"], "timing.Ts"),
        gamma_dis=_num(params["gamma_dis"], "params.gamma_dis"),
        gamma_bla=_num(params["gamma_bla"], "params.gamma_bla"),
        eps=_num(params["eps"], "params.eps"),
        zeta=_num(params["zeta"], "params.zeta"),
        beta=_num(params["beta"], "params.beta"),
        blade_speed_band=band,
    )


def load_config(path) -> MissionConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# validation

def validate(cfg: MissionConfig) -> List[ValidationIssue]:
    """Every invariant violation, as machine-readable issue codes."""
    issues: List[ValidationIssue] = []

    def bad(code, message, where=""):
        issues.append(ValidationIssue(code, message, where))

    named_boxes = [("workspace", cfg.workspace)]
    named_boxes += [(f"obstacles[{i}]", b) for i, b in enumerate(cfg.obstacles)]
    named_boxes += [(f"targets[{i}]", b) for i, b in enumerate(cfg.targets)]
    named_boxes += [(f"homes[{i}]", b) for i, b in enumerate(cfg.homes)]
    named_boxes += [(f"blades[{i}].box", s.box) for i, s in enumerate(cfg.blades)]
    for where, box in named_boxes:
        if box.degenerate():
            bad("BOX_DEGENERATE", "box needs lo < hi on every axis", where)

    if not cfg.workspace.degenerate():
        for where, box in named_boxes[1:]:
            if not box.degenerate() and not cfg.workspace.intersects(box):
                bad("BOX_OUTSIDE_WORKSPACE", "box does not intersect the workspace", where)

    if cfg.ts <= 0:
        bad("NONPOSITIVE_PARAM", "sampling period must be > 0", "timing.Ts")
    elif cfg.tn < cfg.ts:
        bad("WINDOW_EXCEEDS_HORIZON", "horizon shorter than one sample", "timing.TN")
    else:
        n = cfg.n_samples
        if n < 2:
            bad("WINDOW_EXCEEDS_HORIZON", "need at least 2 samples for the home windows", "timing.TN")
        if cfg.t_ins > cfg.tn:
            bad("WINDOW_EXCEEDS_HORIZON", "Tins exceeds TN", "timing.Tins")
        if cfg.t_bla > cfg.tn:
            bad("WINDOW_EXCEEDS_HORIZON", "Tbla exceeds TN", "timing.Tbla")

    if cfg.t_ins < 0:
        bad("NONPOSITIVE_PARAM", "Tins must be >= 0", "timing.Tins")
    if cfg.t_bla < 0:
        bad("NONPOSITIVE_PARAM", "Tbla must be >= 0", "timing.Tbla")
    if cfg.gamma_dis <= 0:
        bad("NONPOSITIVE_PARAM", "separation threshold must be > 0", "params.gamma_dis")
    if cfg.gamma_bla < 0:
        bad("NONPOSITIVE_PARAM", "blade distance must be >= 0", "params.gamma_bla")
    if cfg.eps <= 0:
        bad("NONPOSITIVE_PARAM", "maneuverability margin must be > 0", "params.eps")
    if cfg.zeta < 0:
        bad("NONPOSITIVE_PARAM", "robustness floor must be >= 0", "params.zeta")
    if cfg.beta <= 0:
        bad("NONPOSITIVE_PARAM", "sharpness must be > 0", "params.beta")

    if cfg.delta < 1:
        bad("NO_VEHICLES", "at least one vehicle is required", "vehicles")
    if len(cfg.homes) != cfg.delta:
        bad("HOME_COUNT_MISMATCH", f"{len(cfg.homes)} home boxes for {cfg.delta} vehicles", "homes")

    for i, veh in enumerate(cfg.vehicles):
        where = f"vehicles[{i}]"
        if not cfg.workspace.degenerate() and not cfg.workspace.contains(veh.depot):
            bad("DEPOT_OUTSIDE_WORKSPACE", "depot must lie strictly inside the workspace", where)
        for q, obs in enumerate(cfg.obstacles):
            if not obs.degenerate() and obs.contains(veh.depot, strict=False):
                bad("DEPOT_IN_OBSTACLE", f"depot inside obstacles[{q}]", where)

    for i, seg in enumerate(cfg.blades):
        where = f"blades[{i}]"
        length = float(np.linalg.norm(np.asarray(seg.b) - np.asarray(seg.a)))
        if length <= 0:
            bad("SEGMENT_DEGENERATE", "segment endpoints coincide", where)
            continue
        margin = cfg.gamma_bla + cfg.eps
        lo = np.asarray(seg.box.lo) - margin
        hi = np.asarray(seg.box.hi) + margin
        for endpoint, tag in ((seg.a, "a"), (seg.b, "b")):
            pt = np.asarray(endpoint)
            if np.any(pt < lo) or np.any(pt > hi):
                bad(
                    "SEGMENT_OUTSIDE_BOX",
                    "segment must stay within its box inflated by gamma_bla + eps",
                    f"{where}.{tag}",
                )

    if cfg.blade_speed_band is not None:
        lo, hi = cfg.blade_speed_band
        if not (0 <= lo < hi):
            bad("SPEED_BAND_INVALID", "speed band needs 0 <= lo < hi", "blade_speed_band")

    return issues


# ---------------------------------------------------------------------------
# formula construction

def dist_to_segment(point, seg: BladeSegment) -> float:
    """Exact point-to-segment Euclidean distance."""
    return float(point_segment_distance(np.asarray(point, dtype=float), seg.a, seg.b))


def _in_box(vehicle: int, box: Box, label: Optional[str] = None) -> Formula:
    parts = tuple(
        Pred(AxisBand(vehicle, j + 1, box.lo[j], box.hi[j])) for j in range(3)
    )
    return And(parts, label=label)


def _outside_box(vehicle: int, box: Box, label: Optional[str] = None) -> Formula:
    parts = tuple(
        Pred(AxisBand(vehicle, j + 1, box.lo[j], box.hi[j], negated=True)) for j in range(3)
    )
    return Or(parts, label=label)


def _conjoin(parts: Sequence[Formula], label: Optional[str] = None) -> Formula:
    if len(parts) == 1:
        return parts[0]
    return And(tuple(parts), label=label)


def _disjoin(parts: Sequence[Formula], label: Optional[str] = None) -> Formula:
    if len(parts) == 1:
        return parts[0]
    return Or(tuple(parts), label=label)


def build_formula(cfg: MissionConfig) -> Formula:
    """The full mission formula over the configured sample grid.

    Clause layout (all conjoined):
      * per vehicle, always in [0,N]: workspace and obstacle avoidance and
        pairwise separation;
      * per target q, eventually in [0, N-n_ins]: some vehicle holds the
        target box for n_ins samples;
      * per blade side q, likewise with the distance band (and speed band,
        when configured) for n_bla samples;
      * per vehicle, eventually in [1,N]: the home box;
      * per vehicle, always in [1,N-1]: home implies home at the next sample.
    """
    n = cfg.n_samples
    n_ins = samples_from_seconds(cfg.t_ins, cfg.ts)
    n_bla = samples_from_seconds(cfg.t_bla, cfg.ts)
    if n - n_ins < 0 or n - n_bla < 0 or n < 2:
        raise ValueError("windows exceed the horizon; validate() the config first")

    ids = cfg.vehicle_ids()
    clauses: List[Formula] = []

    for d, home in zip(ids, cfg.homes):
        parts: List[Formula] = [_in_box(d, cfg.workspace, label=f"workspace[p{d}]")]
        for q, obs in enumerate(cfg.obstacles, start=1):
            parts.append(_outside_box(d, obs, label=f"avoid_obstacle[p{d},o{q}]"))
        for m in ids:
            if m != d:
                a, b = min(d, m), max(d, m)
                parts.append(
                    Pred(PairDistance(a, b, cfg.gamma_dis), label=f"separation[p{a},p{b}]")
                )
        clauses.append(Always((0, n), _conjoin(parts), label=f"safety[p{d}]"))

    for q, target in enumerate(cfg.targets, start=1):
        visits = [Always((0, n_ins), _in_box(d, target)) for d in ids]
        clauses.append(Eventually((0, n - n_ins), _disjoin(visits), label=f"target[t{q}]"))

    for seg in cfg.blades:
        visits = []
        for d in ids:
            conj: List[Formula] = list(_in_box(d, seg.box).children)
            conj.append(
                Pred(
                    SegmentDistanceBand(
                        d,
                        seg.name,
                        center=cfg.gamma_bla,
                        halfwidth=cfg.eps,
                        seg_a=seg.a,
                        seg_b=seg.b,
                    )
                )
            )
            if cfg.blade_speed_band is not None:
                lo, hi = cfg.blade_speed_band
                conj.append(Pred(SpeedBand(d, lo, hi)))
            visits.append(Always((0, n_bla), And(tuple(conj))))
        clauses.append(Eventually((0, n - n_bla), _disjoin(visits), label=f"blade[{seg.name}]"))

    for d, home in zip(ids, cfg.homes):
        clauses.append(Eventually((1, n), _in_box(d, home), label=f"home[p{d}]"))

    for d, home in zip(ids, cfg.homes):
        absorbing = Implies(_in_box(d, home), Next(_in_box(d, home)))
        clauses.append(Always((1, n - 1), absorbing, label=f"home_absorbing[p{d}]"))

    return And(tuple(clauses))


def bind_context(cfg: MissionConfig) -> BindContext:
    """Parser bindings for this mission: vehicles, blade segments, box macros.

    Macros: ``home<d>`` and ``ws<d>`` per vehicle, ``target<q>_p<d>`` per
    target/vehicle pair.
    """
    macros: Dict[str, Formula] = {}
    for d, home in zip(cfg.vehicle_ids(), cfg.homes):
        macros[f"home{d}"] = _in_box(d, home)
        macros[f"ws{d}"] = _in_box(d, cfg.workspace)
        for q, target in enumerate(cfg.targets, start=1):
            macros[f"target{q}_p{d}"] = _in_box(d, target)
    segments = {seg.name: (seg.a, seg.b) for seg in cfg.blades}
    return BindContext(ts=cfg.ts, vehicles=cfg.vehicle_ids(), segments=segments, macros=macros)
