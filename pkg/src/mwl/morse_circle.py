"""Morse theory on the circle: critical points, Agmon distances, flow trees.

Everything on S^1 is exact at the level of arcs: between consecutive
critical points f is monotone, so upward flow lines, stable/unstable sets
and Agmon lengths are read off from the sorted critical set instead of
integrating an ODE.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import gmpy2
import numpy as np
from scipy.optimize import brentq

from .tree_combinatorics import TreeTopology, enumerate_topologies

TWO_PI = 2.0 * math.pi


class NotMorseError(ValueError):
    pass


class NonGenericError(ValueError):
    pass


def wrap(theta):
    return np.mod(theta, TWO_PI)


@dataclass(frozen=True)
class PeriodicFunction:
    """f(θ) = a0 + Σ_m (a_m cos mθ + b_m sin mθ), m = 1..D."""

    a0: float = 0.0
    cos: tuple[float, ...] = ()
    sin: tuple[float, ...] = ()

    def __post_init__(self):
        D = max(len(self.cos), len(self.sin))
        object.__setattr__(self, "cos", tuple(float(c) for c in self.cos) + (0.0,) * (D - len(self.cos)))
        object.__setattr__(self, "sin", tuple(float(c) for c in self.sin) + (0.0,) * (D - len(self.sin)))
        object.__setattr__(self, "a0", float(self.a0))

    @property
    def degree(self) -> int:
        return len(self.cos)

    @classmethod
    def from_samples(cls, values: Sequence[float]) -> "PeriodicFunction":
        """Trigonometric interpolant of equispaced samples (odd length keeps it real)."""
        v = np.asarray(values, dtype=float)
        n = len(v)
        c = np.fft.rfft(v) / n
        D = (n - 1) // 2
        a = 2 * c[1 : D + 1].real
        b = -2 * c[1 : D + 1].imag
        if n % 2 == 0:
            # split the Nyquist mode evenly would break realness; keep its cosine part
            a = np.append(a, c[n // 2].real)
            b = np.append(b, 0.0)
        return cls(c[0].real, tuple(a), tuple(b))

    @classmethod
    def from_config(cls, spec) -> "PeriodicFunction":
        if isinstance(spec, PeriodicFunction):
            return spec
        return cls(spec.get("a0", 0.0), tuple(spec.get("cos", ())), tuple(spec.get("sin", ())))

    def to_json(self) -> dict:
        return {"a0": self.a0, "cos": list(self.cos), "sin": list(self.sin)}

    def _pad(self, other: "PeriodicFunction"):
        D = max(self.degree, other.degree)
        pa = lambda t: np.array(t + (0.0,) * (D - len(t)))
        return D, pa(self.cos), pa(self.sin), pa(other.cos), pa(other.sin)

    def __add__(self, other: "PeriodicFunction") -> "PeriodicFunction":
        _, c1, s1, c2, s2 = self._pad(other)
        return PeriodicFunction(self.a0 + other.a0, tuple(c1 + c2), tuple(s1 + s2))

    def __neg__(self) -> "PeriodicFunction":
        return PeriodicFunction(-self.a0, tuple(-c for c in self.cos), tuple(-s for s in self.sin))

    def __sub__(self, other: "PeriodicFunction") -> "PeriodicFunction":
        return self + (-other)

    def __call__(self, theta, order: int = 0):
        return self.deriv(theta, order)

    def deriv(self, theta, order: int = 1):
        th = np.asarray(theta)
        out = np.zeros(th.shape, dtype=np.result_type(th, float)) + (self.a0 if order == 0 else 0.0)
        for m, (a, b) in enumerate(zip(self.cos, self.sin), start=1):
            if a == 0.0 and b == 0.0:
                continue
            # d^r/dθ^r of (a cos + b sin)(mθ): rotate the phase by rπ/2
            ph = m * th + order * math.pi / 2
            out = out + (m**order) * (a * np.cos(ph) + b * np.sin(ph))
        return out if out.shape else out[()]

    def mp_values(self, thetas) -> np.ndarray:
        """Evaluate at mpfr angles (object array), in the current gmpy2 precision."""
        out = []
        for t in thetas:
            v = gmpy2.mpfr(self.a0)
            for m, (a, b) in enumerate(zip(self.cos, self.sin), start=1):
                if a != 0.0:
                    v += a * gmpy2.cos(m * t)
                if b != 0.0:
                    v += b * gmpy2.sin(m * t)
            out.append(v)
        return np.array(out, dtype=object)

    def oscillation(self) -> float:
        th = np.linspace(0, TWO_PI, 4096, endpoint=False)
        v = self(th)
        return float(v.max() - v.min())

    def max_slope(self) -> float:
        th = np.linspace(0, TWO_PI, 4096, endpoint=False)
        return float(np.abs(self.deriv(th, 1)).max())


@dataclass(frozen=True)
class CriticalPoint:
    theta: float
    index: int
    hessian: float
    value: float

    @property
    def degree(self) -> int:
        return self.index

    def to_json(self) -> dict:
        return {"theta": self.theta, "index": self.index, "hessian": self.hessian, "value": self.value}


def critical_points(f: PeriodicFunction, tol: float = 1e-6, samples: int = 1 << 14) -> list[CriticalPoint]:
    """All critical points of f sorted by angle; raises NotMorseError if any is degenerate."""
    th = np.linspace(0.0, TWO_PI, samples, endpoint=False)
    g = f.deriv(th, 1)
    scale = max(np.abs(g).max(), 1e-300)
    if np.abs(g).max() < 1e-12:
        raise NotMorseError("function is constant (every point is critical)")
    roots = []
    g_next = np.roll(g, -1)
    for i in np.nonzero(np.sign(g) != np.sign(g_next))[0]:
        a, b = th[i], th[i] + TWO_PI / samples
        fa, fb = float(f.deriv(a, 1)), float(f.deriv(b, 1))
        if g[i] == 0.0 or fa == 0.0:
            roots.append(a)
            continue
        if fb == 0.0 or np.sign(fa) == np.sign(fb):
            # zero sits on the sample at b (up to rounding); the next bracket or wrap picks it up
            roots.append(b)
            continue
        roots.append(brentq(lambda x: f.deriv(x, 1), a, b, xtol=1e-15, rtol=1e-15))
    # touching zeros without a sign change are degenerate
    ag = np.abs(g)
    local_min = (ag <= np.roll(ag, 1)) & (ag <= np.roll(ag, -1)) & (np.sign(g) == np.sign(g_next)) & (np.sign(g) == np.sign(np.roll(g, 1)))
    for i in np.nonzero(local_min)[0]:
        if ag[i] < 1e-8 * scale:
            raise NotMorseError(f"degenerate critical point near θ={th[i]:.6f}")
    uniq: list[float] = []
    for r in sorted(float(wrap(r)) for r in roots):
        if not uniq or r - uniq[-1] > 1e-9:
            uniq.append(r)
    if len(uniq) > 1 and uniq[0] + TWO_PI - uniq[-1] <= 1e-9:
        uniq.pop()
    roots = uniq
    out = []
    for r in roots:
        hess = float(f.deriv(r, 2))
        if abs(hess) <= tol:
            raise NotMorseError(f"degenerate critical point at θ={r:.6f}: |f''|={abs(hess):.3e}")
        out.append(CriticalPoint(float(r), 1 if hess < 0 else 0, hess, float(f(r))))
    if not out:
        raise NotMorseError("no critical points found")
    return out


def _ccw(a: float, b: float) -> float:
    """Counterclockwise angular distance from a to b in [0, 2π)."""
    return float(np.mod(b - a, TWO_PI))


def _arc_crits(crits: list[CriticalPoint], a: float, b: float) -> list[float]:
    """Critical angles strictly inside the ccw arc a -> b, in order."""
    L = _ccw(a, b)
    inside = [(c.theta, _ccw(a, c.theta)) for c in crits]
    return [t for t, s in sorted(inside, key=lambda p: p[1]) if 0.0 < s < L]


def _arc_length(f: PeriodicFunction, crits, a: float, b: float) -> float:
    # f is monotone between critical points, so ∫|f'| is a sum of |Δf|
    pts = [a] + _arc_crits(crits, a, b) + [b]
    vals = [float(f(p)) for p in pts]
    return float(sum(abs(v1 - v0) for v0, v1 in zip(vals[:-1], vals[1:])))


def agmon_distance(f: PeriodicFunction, x: float, y: float, crits: list[CriticalPoint] | None = None) -> float:
    """Agmon distance for the metric |f'|^2 dθ^2: the shorter of the two arcs."""
    if crits is None:
        crits = critical_points(f)
    x, y = float(wrap(x)), float(wrap(y))
    if x == y:
        return 0.0
    return min(_arc_length(f, crits, x, y), _arc_length(f, crits, y, x))


def _neighbors(crits: list[CriticalPoint], q: CriticalPoint) -> tuple[CriticalPoint, CriticalPoint]:
    """Critical points immediately clockwise and counterclockwise of q."""
    i = next(j for j, c in enumerate(crits) if c.theta == q.theta)
    return crits[i - 1], crits[(i + 1) % len(crits)]


@dataclass(frozen=True)
class Arc:
    """Subset of S^1: the ccw arc start -> end; closed flags per end; a point when start == end."""

    start: float
    end: float
    closed_start: bool = False
    closed_end: bool = False

    @property
    def is_point(self) -> bool:
        return self.start == self.end and self.closed_start

    def contains(self, x: float, margin: float = 0.0) -> bool:
        if self.is_point:
            return abs(math.remainder(x - self.start, TWO_PI)) <= margin
        L = _ccw(self.start, self.end)
        if L == 0.0:
            L = TWO_PI
        s = _ccw(self.start, x)
        if s == 0.0:
            return self.closed_start
        if abs(s - L) == 0.0:
            return self.closed_end
        return s < L

    def boundary_distance(self, x: float) -> float:
        if self.is_point:
            return float("inf")
        return min(abs(math.remainder(x - self.start, TWO_PI)), abs(math.remainder(x - self.end, TWO_PI)))


def unstable_set(f_crits: list[CriticalPoint], q: CriticalPoint) -> Arc:
    """V^-_q: points that flow down away from q; the arc between adjacent minima for a max."""
    if q.index == 0:
        return Arc(q.theta, q.theta, True, True)
    lo, hi = _neighbors(f_crits, q)
    return Arc(lo.theta, hi.theta)


def stable_set(f_crits: list[CriticalPoint], q: CriticalPoint) -> Arc:
    """V^+_q: points on upward trajectories leaving q; the basin arc between adjacent maxima for a min."""
    if q.index == 1:
        return Arc(q.theta, q.theta, True, True)
    lo, hi = _neighbors(f_crits, q)
    return Arc(lo.theta, hi.theta)


def upward_endpoint(f: PeriodicFunction, crits: list[CriticalPoint], x: float) -> tuple[float, int]:
    """The maximum an upward trajectory from a regular point x converges to, and its direction (+1 = ccw)."""
    direction = 1 if f.deriv(x, 1) > 0 else -1
    ahead = [c for c in crits if c.index == 1]
    if direction > 0:
        tgt = min(ahead, key=lambda c: _ccw(x, c.theta) or TWO_PI)
    else:
        tgt = min(ahead, key=lambda c: _ccw(c.theta, x) or TWO_PI)
    return tgt.theta, direction


def morse_differential(f: PeriodicFunction, tol: float = 1e-6) -> tuple[np.ndarray, list[CriticalPoint], list[CriticalPoint]]:
    """Signed counts of upward flow lines from minima (columns) to maxima (rows).

    A flow line running counterclockwise counts -1, clockwise +1.
    """
    crits = critical_points(f, tol)
    mins = [c for c in crits if c.index == 0]
    maxs = [c for c in crits if c.index == 1]
    delta = np.zeros((len(maxs), len(mins)), dtype=int)
    for j, p in enumerate(mins):
        cw, ccw = _neighbors(crits, p)
        for q, direction in ((ccw, 1), (cw, -1)):
            i = next(r for r, m in enumerate(maxs) if m.theta == q.theta)
            delta[i, j] += -direction
    return delta, mins, maxs


@dataclass
class MorseSequence:
    functions: list[PeriodicFunction]
    tol: float = 1e-6
    criticals: dict[tuple[int, int], list[CriticalPoint]] = field(default_factory=dict)

    def __post_init__(self):
        self.functions = [PeriodicFunction.from_config(f) for f in self.functions]
        if len(self.functions) < 2:
            raise ValueError("a Morse sequence needs at least two functions")
        for i, j in self.pairs():
            self.criticals[(i, j)] = critical_points(self.diff(i, j), self.tol)

    @property
    def k(self) -> int:
        return len(self.functions) - 1

    def pairs(self):
        n = len(self.functions)
        return [(i, j) for i in range(n) for j in range(i + 1, n)]

    def diff(self, i: int, j: int) -> PeriodicFunction:
        return self.functions[j] - self.functions[i]

    def crit(self, i: int, j: int, sel) -> CriticalPoint:
        """Select a critical point of f_ij by list position or by angle (nearest)."""
        cs = self.criticals[(i, j)]
        if isinstance(sel, CriticalPoint):
            return sel
        if isinstance(sel, dict):
            if "rank" in sel:
                pool = [c for c in cs if sel.get("index") is None or c.index == sel["index"]]
                return pool[sel["rank"]]
            sel = sel["theta"]
        if isinstance(sel, int):
            return cs[sel]
        return min(cs, key=lambda c: abs(math.remainder(c.theta - float(sel), TWO_PI)))


def degree_balanced(q: Sequence[CriticalPoint]) -> bool:
    """Σ deg(q_{i,i+1}) - k + 2 = deg(q_{0k}) with q = (q_01, ..., q_{k-1,k}, q_0k)."""
    k = len(q) - 1
    return sum(c.index for c in q[:-1]) - k + 2 == q[-1].index


def action(seq: MorseSequence, q: Sequence[CriticalPoint]) -> float:
    k = seq.k
    if len(q) != k + 1:
        raise ValueError(f"expected {k + 1} critical points")
    for i in range(k):
        _check_critical(seq, (i, i + 1), q[i])
    _check_critical(seq, (0, k), q[k])
    return float(seq.diff(0, k)(q[k].theta) - sum(seq.diff(i, i + 1)(q[i].theta) for i in range(k)))


def _check_critical(seq: MorseSequence, lab, c: CriticalPoint):
    if not any(abs(math.remainder(c.theta - d.theta, TWO_PI)) < 1e-9 for d in seq.criticals[lab]):
        raise ValueError(f"θ={c.theta} is not a critical point of f_{lab[0]}{lab[1]}")


@dataclass(frozen=True)
class GradientFlowTree:
    topology: TreeTopology
    vertex_positions: dict[int, float]
    endpoints: tuple[CriticalPoint, ...]
    sign: int

    def to_json(self) -> dict:
        return {
            "topology_id": self.topology.topology_id,
            "vertices": [self.vertex_positions[v] for v in self.topology.vertices],
            "sign": self.sign,
        }


def _leaf_set(seq: MorseSequence, lab, q: CriticalPoint) -> Arc:
    return stable_set(seq.criticals[lab], q)


def _flows_to(seq: MorseSequence, lab, x: float, y: float, tol: float) -> int:
    """Direction (+1 ccw, -1 cw) if y lies on the upward f_lab trajectory leaving x after positive time, else 0."""
    f = seq.diff(*lab)
    crits = seq.criticals[lab]
    slope = f.deriv(x, 1)
    if abs(slope) <= tol:
        return 0
    end, direction = upward_endpoint(f, crits, x)
    arc = Arc(x, end) if direction > 0 else Arc(end, x)
    if not arc.contains(y):
        return 0
    if arc.boundary_distance(y) < tol:
        raise NonGenericError(f"vertex {y:.6f} within {tol} of an end of the f_{lab[0]}{lab[1]} flow line")
    return direction


def _candidates(seq: MorseSequence) -> list[float]:
    seen = []
    for cs in seq.criticals.values():
        for c in cs:
            if all(abs(math.remainder(c.theta - s, TWO_PI)) > 1e-12 for s in seen):
                seen.append(c.theta)
    return sorted(seen)


def tree_sign_and_check(seq: MorseSequence, q, t: TreeTopology, pos: dict[int, float], tol: float):
    """Return the sign of the configuration if it is a gradient tree, else None.

    Signs: a leaf from q carries (deg q, +1); a vertex adds degrees and
    multiplies signs; an internal edge lowers the degree by one and
    multiplies by its flow direction; the root keeps the sign.
    """
    k = t.k
    state: dict[int, tuple[int, int]] = {}
    for pos_i, eid in enumerate(t.leaf_order):
        e = t.edges[eid]
        arc = _leaf_set(seq, e.label, q[pos_i])
        x = pos[e.dst]
        if not arc.contains(x, margin=1e-12):
            return None
        if not arc.is_point and arc.boundary_distance(x) < tol:
            raise NonGenericError(f"vertex at {x:.6f} near the boundary of a stable arc of f_{e.label[0]}{e.label[1]}")
        state[eid] = (q[pos_i].index, 1)
    for v in t.vertices:
        a, b = t.incoming(v)
        deg = state[a.id][0] + state[b.id][0]
        sgn = state[a.id][1] * state[b.id][1]
        out = t.outgoing(v)
        if out.kind == "internal":
            if deg != 1:
                return None
            direction = _flows_to(seq, out.label, pos[v], pos[out.dst], tol)
            if direction == 0:
                return None
            state[out.id] = (0, sgn * direction)
        else:
            state[out.id] = (deg, sgn)
    root = t.root_edge
    crits0k = seq.criticals[(0, k)]
    arc = unstable_set(crits0k, q[k])
    x = pos[t.root]
    if not arc.contains(x, margin=1e-12):
        return None
    if not arc.is_point and arc.boundary_distance(x) < tol:
        raise NonGenericError("root vertex near the boundary of the unstable arc")
    if state[root.id][0] != q[k].index:
        return None
    return state[root.id][1]


def find_gradient_trees(seq: MorseSequence, q: Sequence[CriticalPoint], t: TreeTopology, tol: float = 1e-4) -> list[GradientFlowTree]:
    """Rigid gradient flow trees of type t ending on q = (q_01, ..., q_{k-1,k}, q_0k).

    On the circle every vertex of a rigid tree is pinned by a point
    constraint (a maximum on an incoming leaf or a minimum at the root),
    so vertex positions are searched among the critical points of all f_ij
    and each assignment is checked exactly against the arc constraints.
    """
    q = tuple(q)
    if not degree_balanced(q):
        return []
    if t.k == 1:
        p, r = q
        f = seq.diff(0, 1)
        if p.index != 0 or r.index != 1:
            return []
        cw, ccw = _neighbors(seq.criticals[(0, 1)], p)
        out = []
        for nb, direction in ((ccw, 1), (cw, -1)):
            if nb.theta == r.theta:
                out.append(GradientFlowTree(t, {}, q, -direction))
        return out
    cands = _candidates(seq)
    found = []
    for combo in itertools.product(cands, repeat=len(t.vertices)):
        pos = dict(zip(t.vertices, combo))
        s = tree_sign_and_check(seq, q, t, pos, tol)
        if s is not None:
            found.append(GradientFlowTree(t, pos, q, s))
    return found


def morse_product(seq: MorseSequence, q: Sequence[CriticalPoint], tol: float = 1e-4) -> tuple[int, dict[str, int]]:
    """Signed count over all topologies, with the per-topology breakdown."""
    q = tuple(q)
    per = {}
    if not degree_balanced(q):
        return 0, {t.topology_id: 0 for t in enumerate_topologies(seq.k)}
    for t in enumerate_topologies(seq.k):
        per[t.topology_id] = sum(g.sign for g in find_gradient_trees(seq, q, t, tol))
    return sum(per.values()), per


def tree_length(seq: MorseSequence, q: Sequence[CriticalPoint], t: TreeTopology, pos: dict[int, float]) -> float:
    """Agmon length of the geodesic tree with the given interior vertices."""
    k = t.k
    total = 0.0
    for i, eid in enumerate(t.leaf_order):
        e = t.edges[eid]
        total += agmon_distance(seq.diff(*e.label), q[i].theta, pos[e.dst], seq.criticals[e.label])
    for e in t.internal_edges:
        total += agmon_distance(seq.diff(*e.label), pos[e.src], pos[e.dst], seq.criticals[e.label])
    total += agmon_distance(seq.diff(0, k), q[k].theta, pos[t.root], seq.criticals[(0, k)])
    return total


def tree_action(seq: MorseSequence, q: Sequence[CriticalPoint], t: TreeTopology, grid: int = 720) -> tuple[float, dict[int, float]]:
    """Minimum of the tree-length functional over vertex positions.

    Coarse search over a grid enriched by all critical angles, then
    coordinate refinement. Equals action(q) exactly when a gradient tree
    of type t exists.
    """
    from scipy.optimize import minimize_scalar

    base = list(np.linspace(0.0, TWO_PI, grid, endpoint=False)) + _candidates(seq)
    verts = list(t.vertices)
    best = (math.inf, None)
    if len(verts) == 1:
        for x in base:
            L = tree_length(seq, q, t, {verts[0]: x})
            if L < best[0]:
                best = (L, {verts[0]: x})
    else:
        coarse = _candidates(seq) + list(np.linspace(0.0, TWO_PI, 96, endpoint=False))
        for combo in itertools.product(coarse, repeat=len(verts)):
            pos = dict(zip(verts, combo))
            L = tree_length(seq, q, t, pos)
            if L < best[0]:
                best = (L, pos)
    L, pos = best
    step = TWO_PI / grid
    for _ in range(6):
        for v in verts:
            c = pos[v]
            res = minimize_scalar(
                lambda x: tree_length(seq, q, t, {**pos, v: x}),
                bounds=(c - 2 * step, c + 2 * step),
                method="bounded",
                options={"xatol": 1e-12},
            )
            if res.fun < L:
                L, pos = float(res.fun), {**pos, v: float(wrap(res.x))}
    return L, pos
