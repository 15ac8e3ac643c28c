"""Quantitative robustness, its log-sum-exponential smoothing, and gradients.

Exact robustness follows the usual min/max recursion over the formula tree.
The smooth variant replaces every min with ``-(1/beta) ln sum exp(-beta r)``
and every max with ``(1/beta) ln sum exp(beta r)`` -- including the two-sided
mins hidden inside band predicates -- which makes the value differentiable in
every signal entry.  Gradients are assembled by reverse accumulation over the
tree: each smoothed node distributes its adjoint to children via softmax
weights, and predicates convert adjoints into derivatives with respect to the
sampled positions and velocities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .formula import (
    And,
    Always,
    AxisBand,
    Eventually,
    Formula,
    HorizonError,
    Implies,
    Next,
    Not,
    Or,
    PairDistance,
    Pred,
    SegmentDistanceBand,
    Signal,
    SpeedBand,
    _children,
    eval_bool,
    horizon,
    point_segment_distance,
)

__all__ = [
    "smooth_min",
    "smooth_max",
    "softmin_weights",
    "softmax_weights",
    "rho",
    "rho_trace",
    "rho_smooth",
    "rho_smooth_trace",
    "grad_rho_smooth",
    "GradientVector",
    "RobustnessReport",
    "evaluate",
    "labeled_traces",
    "max_fanin",
    "minmax_depth",
]


# ---------------------------------------------------------------------------
# smooth min/max primitives

def smooth_max(values: np.ndarray, beta: float, axis: int = 0) -> np.ndarray:
    """Log-sum-exponential upper approximation of max along ``axis``.

    Satisfies max(r) <= smooth_max(r) <= max(r) + ln(n)/beta.  The extreme is
    subtracted before exponentiating, so arbitrarily large ``beta * r`` does
    not overflow.
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    values = np.asarray(values, dtype=float)
    m = np.max(values, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(beta * (values - m)), axis=axis, keepdims=True)) / beta
    return np.squeeze(out, axis=axis)


def smooth_min(values: np.ndarray, beta: float, axis: int = 0) -> np.ndarray:
    """Log-sum-exponential lower approximation of min along ``axis``.

    Satisfies min(r) - ln(n)/beta <= smooth_min(r) <= min(r).
    """
    return -smooth_max(-np.asarray(values, dtype=float), beta, axis=axis)


def softmax_weights(values: np.ndarray, beta: float, axis: int = 0) -> np.ndarray:
    """Gradient weights of smooth_max: w_i = exp(beta r_i) / sum exp(beta r_j)."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    values = np.asarray(values, dtype=float)
    m = np.max(values, axis=axis, keepdims=True)
    e = np.exp(beta * (values - m))
    return e / np.sum(e, axis=axis, keepdims=True)


def softmin_weights(values: np.ndarray, beta: float, axis: int = 0) -> np.ndarray:
    """Gradient weights of smooth_min: softmax of the negated inputs."""
    return softmax_weights(-np.asarray(values, dtype=float), beta, axis=axis)


# ---------------------------------------------------------------------------
# forward evaluation (shared by exact and smooth semantics)

def _safe_unit(diff: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """diff / norms with a zero vector wherever the norm vanishes."""
    out = np.zeros_like(diff)
    mask = norms > 0.0
    np.divide(diff, norms, out=out, where=mask)
    return out


class _Eval:
    """Per-node value traces; ``beta=None`` selects hard min/max."""

    def __init__(self, s: Signal, beta: Optional[float]):
        if beta is not None and beta <= 0:
            raise ValueError("beta must be > 0")
        self.s = s
        self.beta = beta
        self.values: Dict[Tuple[int, ...], np.ndarray] = {}

    def _reduce_min(self, stacked: np.ndarray) -> np.ndarray:
        if self.beta is None:
            return np.min(stacked, axis=0)
        return smooth_min(stacked, self.beta, axis=0)

    def _reduce_max(self, stacked: np.ndarray) -> np.ndarray:
        if self.beta is None:
            return np.max(stacked, axis=0)
        return smooth_max(stacked, self.beta, axis=0)

    def _pred_sides(self, pred) -> Tuple[np.ndarray, str]:
        """Stacked raw margins plus the reduction needed on them."""
        s = self.s
        if isinstance(pred, AxisBand):
            x = s.p[s.row(pred.vehicle), pred.axis - 1, :]
            sides = np.stack([x - pred.lo, pred.hi - x])
            return sides, "negmin" if pred.negated else "min"
        if isinstance(pred, PairDistance):
            dp = s.p[s.row(pred.vehicle_a)] - s.p[s.row(pred.vehicle_b)]
            d = np.linalg.norm(dp, axis=0)
            return (d - pred.gamma)[None, :], "single"
        if isinstance(pred, SegmentDistanceBand):
            pts = s.p[s.row(pred.vehicle)].T
            d = point_segment_distance(pts, pred.seg_a, pred.seg_b)
            lo = pred.center - pred.halfwidth
            hi = pred.center + pred.halfwidth
            return np.stack([d - lo, hi - d]), "min"
        if isinstance(pred, SpeedBand):
            sp = np.linalg.norm(s.v[s.row(pred.vehicle)], axis=0)
            return np.stack([sp - pred.lo, pred.hi - sp]), "min"
        raise TypeError(f"unknown predicate {pred!r}")

    def _window(self, arr: np.ndarray, a: int, b: int) -> np.ndarray:
        length = arr.shape[0] - b
        if length <= 0:
            raise HorizonError(
                f"window [{a},{b}] needs {b + 1} samples but only {arr.shape[0]} are defined"
            )
        return np.stack([arr[a + i : a + i + length] for i in range(b - a + 1)])

    def value(self, phi: Formula, path: Tuple[int, ...] = ()) -> np.ndarray:
        if path in self.values:
            return self.values[path]
        if isinstance(phi, Pred):
            sides, kind = self._pred_sides(phi.pred)
            if kind == "single":
                out = sides[0]
            elif kind == "min":
                out = self._reduce_min(sides)
            else:  # negmin
                out = -self._reduce_min(sides)
        elif isinstance(phi, Not):
            out = -self.value(phi.child, path + (0,))
        elif isinstance(phi, (And, Or)):
            traces = [self.value(c, path + (i,)) for i, c in enumerate(phi.children)]
            n = min(t.shape[0] for t in traces)
            stacked = np.stack([t[:n] for t in traces])
            out = self._reduce_min(stacked) if isinstance(phi, And) else self._reduce_max(stacked)
        elif isinstance(phi, Implies):
            lhs = self.value(phi.lhs, path + (0,))
            rhs = self.value(phi.rhs, path + (1,))
            n = min(lhs.shape[0], rhs.shape[0])
            out = self._reduce_max(np.stack([-lhs[:n], rhs[:n]]))
        elif isinstance(phi, Always):
            win = self._window(self.value(phi.child, path + (0,)), *phi.interval)
            out = self._reduce_min(win)
        elif isinstance(phi, Eventually):
            win = self._window(self.value(phi.child, path + (0,)), *phi.interval)
            out = self._reduce_max(win)
        elif isinstance(phi, Next):
            child = self.value(phi.child, path + (0,))
            if child.shape[0] < 2:
                raise HorizonError("Next needs at least one sample beyond the current index")
            out = child[1:]
        else:
            raise TypeError(f"not a formula node: {phi!r}")
        self.values[path] = out
        return out


def rho_trace(phi: Formula, s: Signal) -> np.ndarray:
    """Exact robustness at every index where the horizon fits."""
    return _Eval(s, None).value(phi)


def rho(phi: Formula, s: Signal, k: int = 0) -> float:
    """Exact robustness of ``phi`` on ``s`` at sample index ``k``."""
    trace = rho_trace(phi, s)
    if not 0 <= k < trace.shape[0]:
        raise HorizonError(f"index {k} outside the {trace.shape[0]} defined samples")
    return float(trace[k])


def rho_smooth_trace(phi: Formula, s: Signal, beta: float) -> np.ndarray:
    if beta <= 0:
        raise ValueError("beta must be > 0")
    return _Eval(s, beta).value(phi)


def rho_smooth(phi: Formula, s: Signal, k: int, beta: float) -> float:
    """Smoothed robustness; converges to ``rho`` from either side as beta grows."""
    trace = rho_smooth_trace(phi, s, beta)
    if not 0 <= k < trace.shape[0]:
        raise HorizonError(f"index {k} outside the {trace.shape[0]} defined samples")
    return float(trace[k])


# ---------------------------------------------------------------------------
# gradients

@dataclass
class GradientVector:
    """d(rho_smooth)/d(signal), aligned with the Signal arrays."""

    dp: np.ndarray  # (V, 3, N+1)
    dv: np.ndarray  # (V, 3, N+1)
    ids: Tuple[int, ...]


def grad_rho_smooth(phi: Formula, s: Signal, k: int, beta: float) -> GradientVector:
    """Analytic gradient of ``rho_smooth(phi, s, k, beta)`` in every signal entry.

    Reverse pass over the tree: nodes are processed parents-first (paths sort
    by length), each distributing its adjoint trace to children through the
    softmax weights of its smoothed reduction.
    """
    ev = _Eval(s, beta)
    trace = ev.value(phi)
    if not 0 <= k < trace.shape[0]:
        raise HorizonError(f"index {k} outside the {trace.shape[0]} defined samples")

    nodes: Dict[Tuple[int, ...], Formula] = {}

    def collect(node: Formula, path: Tuple[int, ...]):
        nodes[path] = node
        for i, child in enumerate(_children(node)):
            collect(child, path + (i,))

    collect(phi, ())

    adjoint: Dict[Tuple[int, ...], np.ndarray] = {
        path: np.zeros_like(ev.values[path]) for path in nodes
    }
    adjoint[()][k] = 1.0

    dp = np.zeros_like(s.p)
    dv = np.zeros_like(s.v)

    for path in sorted(nodes, key=len):
        node = nodes[path]
        adj = adjoint[path]
        if not np.any(adj):
            continue
        if isinstance(node, Pred):
            _pred_backward(ev, node.pred, adj, dp, dv, beta)
        elif isinstance(node, Not):
            adjoint[path + (0,)] -= adj
        elif isinstance(node, (And, Or)):
            traces = [ev.values[path + (i,)] for i in range(len(node.children))]
            n = adj.shape[0]
            stacked = np.stack([t[:n] for t in traces])
            if isinstance(node, And):
                w = softmin_weights(stacked, beta, axis=0)
            else:
                w = softmax_weights(stacked, beta, axis=0)
            for i in range(len(node.children)):
                adjoint[path + (i,)][:n] += adj * w[i]
        elif isinstance(node, Implies):
            lhs = ev.values[path + (0,)]
            rhs = ev.values[path + (1,)]
            n = adj.shape[0]
            w = softmax_weights(np.stack([-lhs[:n], rhs[:n]]), beta, axis=0)
            adjoint[path + (0,)][:n] -= adj * w[0]
            adjoint[path + (1,)][:n] += adj * w[1]
        elif isinstance(node, (Always, Eventually)):
            a, b = node.interval
            child = ev.values[path + (0,)]
            win = ev._window(child, a, b)
            if isinstance(node, Always):
                w = softmin_weights(win, beta, axis=0)
            else:
                w = softmax_weights(win, beta, axis=0)
            n = adj.shape[0]
            cadj = adjoint[path + (0,)]
            for i in range(b - a + 1):
                cadj[a + i : a + i + n] += adj * w[i]
        elif isinstance(node, Next):
            n = adj.shape[0]
            adjoint[path + (0,)][1 : 1 + n] += adj
        else:
            raise TypeError(f"not a formula node: {node!r}")

    return GradientVector(dp=dp, dv=dv, ids=s.ids)


def _pred_backward(ev: _Eval, pred, adj: np.ndarray, dp: np.ndarray, dv: np.ndarray, beta: float):
    s = ev.s
    n = adj.shape[0]
    if isinstance(pred, AxisBand):
        x = s.p[s.row(pred.vehicle), pred.axis - 1, :n]
        sides = np.stack([x - pred.lo, pred.hi - x])
        w = softmin_weights(sides, beta, axis=0)
        dmargin_dx = w[0] - w[1]
        if pred.negated:
            dmargin_dx = -dmargin_dx
        dp[s.row(pred.vehicle), pred.axis - 1, :n] += adj * dmargin_dx
    elif isinstance(pred, PairDistance):
        ra, rb = s.row(pred.vehicle_a), s.row(pred.vehicle_b)
        diff = s.p[ra, :, :n] - s.p[rb, :, :n]
        d = np.linalg.norm(diff, axis=0)
        unit = _safe_unit(diff, d[None, :])
        dp[ra, :, :n] += adj[None, :] * unit
        dp[rb, :, :n] -= adj[None, :] * unit
    elif isinstance(pred, SegmentDistanceBand):
        r = s.row(pred.vehicle)
        pts = s.p[r, :, :n].T
        a = np.asarray(pred.seg_a)
        seg = np.asarray(pred.seg_b) - a
        t = np.clip(((pts - a) @ seg) / float(seg @ seg), 0.0, 1.0)
        closest = a + t[:, None] * seg
        diff = (pts - closest).T
        d = np.linalg.norm(diff, axis=0)
        unit = _safe_unit(diff, d[None, :])
        lo = pred.center - pred.halfwidth
        hi = pred.center + pred.halfwidth
        sides = np.stack([d - lo, hi - d])
        w = softmin_weights(sides, beta, axis=0)
        dmargin_dd = w[0] - w[1]
        dp[r, :, :n] += (adj * dmargin_dd)[None, :] * unit
    elif isinstance(pred, SpeedBand):
        r = s.row(pred.vehicle)
        vel = s.v[r, :, :n]
        sp = np.linalg.norm(vel, axis=0)
        unit = _safe_unit(vel, sp[None, :])
        sides = np.stack([sp - pred.lo, pred.hi - sp])
        w = softmin_weights(sides, beta, axis=0)
        dmargin_dsp = w[0] - w[1]
        dv[r, :, :n] += (adj * dmargin_dsp)[None, :] * unit
    else:
        raise TypeError(f"unknown predicate {pred!r}")


# ---------------------------------------------------------------------------
# reports and diagnostics

@dataclass
class RobustnessReport:
    rho: float
    rho_smooth: float
    beta: float
    per_subformula: Dict[str, float]  # exact values keyed by AST path
    labels: Dict[str, str]  # path -> clause label, where one was assigned
    verdict: bool

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "rho_smooth": self.rho_smooth,
            "beta": self.beta,
            "verdict": self.verdict,
            "per_subformula": dict(self.per_subformula),
            "labels": dict(self.labels),
        }


def _path_str(path: Tuple[int, ...]) -> str:
    return "phi" if not path else "phi." + ".".join(map(str, path))


def evaluate(phi: Formula, s: Signal, beta: float, k: int = 0) -> RobustnessReport:
    """Exact and smooth robustness plus a per-subformula breakdown at index ``k``.

    Breakdown entries are the exact (not smoothed) robustness of each
    subformula at the report index, which keeps the per-clause margins
    directly auditable.
    """
    ev = _Eval(s, None)
    root = ev.value(phi)
    if not 0 <= k < root.shape[0]:
        raise HorizonError(f"index {k} outside the {root.shape[0]} defined samples")
    per: Dict[str, float] = {}
    labels: Dict[str, str] = {}

    def walk(node: Formula, path: Tuple[int, ...]):
        arr = ev.values[path]
        if k < arr.shape[0]:
            per[_path_str(path)] = float(arr[k])
        if node.label:
            labels[_path_str(path)] = node.label
        for i, child in enumerate(_children(node)):
            walk(child, path + (i,))

    walk(phi, ())
    exact = per[_path_str(())]
    smooth = rho_smooth(phi, s, k, beta)
    return RobustnessReport(
        rho=exact,
        rho_smooth=smooth,
        beta=beta,
        per_subformula=per,
        labels=labels,
        verdict=exact > 0,
    )


def labeled_traces(phi: Formula, s: Signal) -> List[Tuple[str, str, np.ndarray]]:
    """(path, label, exact robustness trace) for every labeled subformula."""
    ev = _Eval(s, None)
    ev.value(phi)
    out = []

    def walk(node: Formula, path: Tuple[int, ...]):
        if node.label:
            out.append((_path_str(path), node.label, ev.values[path].copy()))
        for i, child in enumerate(_children(node)):
            walk(child, path + (i,))

    walk(phi, ())
    return out


def max_fanin(phi: Formula) -> int:
    """Largest fan-in of any min/max reduction in the tree (predicates count 2)."""
    best = 1
    stack = [phi]
    while stack:
        node = stack.pop()
        if isinstance(node, Pred):
            if not isinstance(node.pred, PairDistance):
                best = max(best, 2)
        elif isinstance(node, (And, Or)):
            best = max(best, len(node.children))
            stack.extend(node.children)
        elif isinstance(node, Implies):
            best = max(best, 2)
            stack.extend((node.lhs, node.rhs))
        elif isinstance(node, (Always, Eventually)):
            a, b = node.interval
            best = max(best, b - a + 1)
            stack.append(node.child)
        elif isinstance(node, (Not, Next)):
            stack.append(node.child)
    return best


def minmax_depth(phi: Formula) -> int:
    """Deepest nesting of min/max reductions along any root-to-leaf path."""
    if isinstance(phi, Pred):
        return 0 if isinstance(phi.pred, PairDistance) else 1
    if isinstance(phi, (Not, Next)):
        return minmax_depth(phi.child)
    if isinstance(phi, (And, Or)):
        return 1 + max(minmax_depth(c) for c in phi.children)
    if isinstance(phi, Implies):
        return 1 + max(minmax_depth(phi.lhs), minmax_depth(phi.rhs))
    if isinstance(phi, (Always, Eventually)):
        return 1 + minmax_depth(phi.child)
    raise TypeError(f"not a formula node: {phi!r}")


def approximation_bound(phi: Formula, beta: float) -> float:
    """Upper bound on |rho_smooth - rho|: depth * ln(max fan-in) / beta."""
    return minmax_depth(phi) * np.log(max(max_fanin(phi), 1)) / beta
