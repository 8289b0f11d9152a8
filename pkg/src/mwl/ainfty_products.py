"""Tree products m_k(ℏ) on small subspaces and an A∞-relation checker.

Products follow the tree rules literally: the inclusion at leaves, the
wedge at vertices, the homotopy H_ij on internal edges and the projector
P_0k at the root, with no extra signs. Inputs are written in the order
(x_k, ..., x_1) with x_i in Ω_{i-1,i}; the wedge a ∧ b takes a ∈ Ω_jk and
b ∈ Ω_ij.

The relation checker works in the shifted (bar) convention where the
transferred structure is sign free (see :func:`bar_products`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import gmpy2
import numpy as np

from .morse_circle import CriticalPoint
from .tree_combinatorics import TreeTopology, enumerate_topologies


class ConfigurationError(ValueError):
    pass


class Retract(Protocol):
    """What the tree evaluator needs from the retract of one f_ij."""

    half_minus: np.ndarray  # e^{-δ/2ℏ} on edges
    half_plus: np.ndarray  # e^{+δ/2ℏ} on edges

    def project(self, x, degree: int): ...

    def homotopy(self, x, degree: int): ...

    def d(self, x): ...

    def phi(self, q: CriticalPoint): ...

    def norm2(self, x): ...


def wedge_values(a, da: int, b, db: int, ra: Retract, rb: Retract):
    """Twisted cup product a ∧ b of dec cochains, a ∈ Ω_jk (retract ra), b ∈ Ω_ij (rb)."""
    if da + db > 1:
        return None
    if da == 0 and db == 0:
        return a * b
    if da == 0:
        return a * ra.half_minus * b
    return a * np.roll(b, -1) * rb.half_plus


@dataclass
class ProductValue:
    k: int
    q_tuple: tuple
    hbar: float
    degree: int
    output: object
    per_tree: dict[str, object]
    pairing: object = None
    per_tree_pairing: dict[str, object] = field(default_factory=dict)

    def to_json(self) -> dict:
        def la(v):
            return _log_abs(v), _sign(v)

        lp, sp = la(self.pairing)
        return {
            "k": self.k,
            "q_tuple": [float(c.theta) if isinstance(c, CriticalPoint) else c for c in self.q_tuple],
            "hbar": self.hbar,
            "pairing_log_abs": lp,
            "pairing_sign": sp,
            "per_tree": [
                {"topology_id": tid, "pairing_log_abs": _log_abs(v), "sign": _sign(v)}
                for tid, v in self.per_tree_pairing.items()
            ],
        }


def _log_abs(v) -> float:
    if v is None or v == 0:
        return -math.inf
    if isinstance(v, (float, int, np.floating)):
        return math.log(abs(v))
    return float(gmpy2.log(abs(v)))


def _sign(v) -> int:
    if v is None or v == 0:
        return 0
    return 1 if v > 0 else -1


def _ip(x, y, h):
    return h * np.dot(x, y)


def m1(retract: Retract, x, degree: int):
    """m_1 is d restricted to the small subspace."""
    if degree != 0:
        return None, 2
    return retract.project(retract.d(x), 1), 1


def m2(retracts: dict, b, db: int, a, da: int):
    """m_2(b, a) = P_02(b ∧ a) for b ∈ Ω_12, a ∈ Ω_01."""
    for lab in ((0, 1), (1, 2), (0, 2)):
        if lab not in retracts:
            raise ConfigurationError(f"missing retract for label {lab}")
    _check_hbar(retracts)
    w = wedge_values(b, db, a, da, retracts[(1, 2)], retracts[(0, 1)])
    if w is None:
        return None, 2
    return retracts[(0, 2)].project(w, db + da), db + da


def _check_hbar(retracts: dict):
    hs = {float(getattr(r, "hbar", 0.0)) for r in retracts.values()}
    if len(hs) > 1:
        raise ConfigurationError(f"retracts built at different ℏ: {sorted(hs)}")


def mk_tree(t: TreeTopology, inputs: Sequence[tuple[object, int]], retracts: dict, use_homotopy: bool = True):
    """Evaluate one tree. ``inputs`` lists (cochain, degree) for labels 01, 12, ..., (k-1)k.

    Returns (cochain in Ω_0k, degree) or (None, degree) when a degree
    exceeds the top degree somewhere in the tree.
    """
    k = t.k
    if len(inputs) != k:
        raise ConfigurationError(f"tree with {k} leaves got {len(inputs)} inputs")
    needed = {e.label for e in t.edges}
    missing = [lab for lab in needed if lab not in retracts]
    if missing:
        raise ConfigurationError(f"missing retract for labels {sorted(missing)}")
    if k == 1:
        x, dx = inputs[0]
        return m1(retracts[(0, 1)], x, dx)
    val: dict[int, tuple[object, int]] = {}
    for pos, eid in enumerate(t.leaf_order):
        val[eid] = inputs[pos]
    for v in t.vertices:
        ea, eb = t.incoming(v)  # ea carries the later label
        (a, da), (b, db) = val[ea.id], val[eb.id]
        out = t.outgoing(v)
        if a is None or b is None:
            val[out.id] = (None, da + db)
            continue
        w = wedge_values(a, da, b, db, retracts[ea.label], retracts[eb.label])
        deg = da + db
        if w is None:
            val[out.id] = (None, deg)
            continue
        if out.kind == "internal":
            if use_homotopy:
                w = retracts[out.label].homotopy(w, deg)
            else:
                w = 0 * w
            deg -= 1
        else:
            w = retracts[out.label].project(w, deg)
        val[out.id] = (w, deg)
    return val[t.root_edge.id]


def mk_total(k: int, inputs, retracts: dict, use_homotopy: bool = True):
    """Sum over all topologies; returns (total, degree, per-tree dict)."""
    per = {}
    total, degree = None, None
    for t in enumerate_topologies(k):
        v, deg = mk_tree(t, inputs, retracts, use_homotopy)
        per[t.topology_id] = v
        degree = deg
        if v is not None:
            total = v if total is None else total + v
    return total, degree, per


def pairing(retract: Retract, value, q: CriticalPoint):
    """⟨value, φ_q / ‖φ_q‖²⟩ in Ω_0k."""
    if value is None:
        return 0
    phi = retract.phi(q)
    return retract.ip(value, phi) / retract.ip(phi, phi)


def product_value(k: int, q: Sequence[CriticalPoint], retracts: dict, hbar: float) -> ProductValue:
    """m_k on the localized basis at q = (q_01, ..., q_{k-1,k}, q_0k), with pairings."""
    inputs = [(retracts[(i, i + 1)].phi(q[i]), q[i].index) for i in range(k)]
    total, deg, per = mk_total(k, inputs, retracts)
    expected = sum(c.index for c in q[:-1]) - k + 2
    if deg is not None and total is not None and deg != expected:
        raise AssertionError(f"degree bookkeeping broken: {deg} != {expected}")
    R = retracts[(0, k)]
    pv = ProductValue(k, tuple(q), hbar, expected, total, per)
    if expected == q[-1].index and total is not None:
        pv.pairing = pairing(R, total, q[-1])
        pv.per_tree_pairing = {tid: pairing(R, v, q[-1]) for tid, v in per.items()}
    else:
        pv.pairing = 0
        pv.per_tree_pairing = {tid: 0 for tid in per}
    return pv


# ---------------------------------------------------------------------------
# A∞ relations


@dataclass
class MatrixRetract:
    """Dense retract of a graded complex Ω⁰ ⊕ Ω¹ (each of size n): full vectors are [u; w].

    D: full differential; I: full × small inclusion; P: small × full
    projection; H: full homotopy with DH + HD = 1 - IP.
    """

    label: tuple[int, int]
    n: int
    D: np.ndarray
    I: np.ndarray
    P: np.ndarray
    H: np.ndarray
    small_deg: np.ndarray
    half_minus: np.ndarray
    half_plus: np.ndarray

    @property
    def full_dim(self) -> int:
        return 2 * self.n

    def homotopy_residual(self) -> float:
        N = self.full_dim
        lhs = self.D @ self.H + self.H @ self.D
        rhs = np.eye(N) - self.I @ self.P
        return float(np.abs(lhs - rhs).max() / max(np.abs(rhs).max(), 1e-300))


def full_wedge(a: np.ndarray, da: int, b: np.ndarray, db: int, ra: MatrixRetract, rb: MatrixRetract):
    n = ra.n
    if da + db > 1:
        return None
    out = np.zeros(2 * n)
    va = a[:n] if da == 0 else a[n:]
    vb = b[:n] if db == 0 else b[n:]
    w = wedge_values(va, da, vb, db, ra, rb)
    if da + db == 0:
        out[:n] = w
    else:
        out[n:] = w
    return out


def _sg(k: int) -> int:
    return -1 if k % 2 else 1


def bar_products(retracts: dict[tuple[int, int], MatrixRetract]):
    """Return b(items) for the transferred structure in the shifted convention.

    ``items`` is a left-to-right tuple of (label, small index) with
    consecutive labels decreasing, e.g. ((2,3), i), ((1,2), j), ((0,1), l).
    On the suspension, b1 = d, b2(sx, sy) = (-1)^{|x|} s(x∧y), the shifted
    homotopy is -H, and with every T_n of degree 0 the tree sum needs no
    Koszul signs:

        T_1 = ι,  T_n = -H Σ b2(T_i ⊗ T_j),  b_n = P Σ b2(T_i ⊗ T_j).
    """
    cache: dict = {}

    def span(items):
        return (items[-1][0][0], items[0][0][1])

    def T(items):
        if items in cache:
            return cache[items]
        if len(items) == 1:
            (lab, i), = items
            R = retracts[lab]
            res = (R.I[:, i], int(R.small_deg[i]))
        else:
            v, deg = _tree_sum(items)
            R = retracts[span(items)]
            res = (None, deg - 1) if v is None else (-(R.H @ v), deg - 1)
        cache[items] = res
        return res

    def _tree_sum(items):
        tot, deg = None, None
        for s in range(1, len(items)):
            left, right = items[:s], items[s:]
            a, da = T(left)
            b, db = T(right)
            deg = da + db
            if a is None or b is None:
                continue
            w = full_wedge(a, da, b, db, retracts[span(left)], retracts[span(right)])
            if w is None:
                continue
            w = _sg(da) * w
            tot = w if tot is None else tot + w
        return tot, deg

    def b(items):
        items = tuple(items)
        R = retracts[span(items)]
        if len(items) == 1:
            (lab, i), = items
            return R.P @ (R.D @ R.I[:, i])
        v, _ = _tree_sum(items)
        if v is None:
            return np.zeros(R.P.shape[0])
        return R.P @ v

    return b


def a_infinity_residual(retracts: dict[tuple[int, int], MatrixRetract], k_max: int, objects: Sequence[int] | None = None) -> dict:
    """Max relative residual of Σ b(1^r ⊗ b ⊗ 1^t) = 0 over basis tuples, per arity ≤ k_max.

    Each residual is divided by the square of the largest entry of any
    structure map evaluated up to that arity, so vanishing relations
    are not measured against roundoff.
    """
    b_raw = bar_products(retracts)
    seen = [0.0]

    def b(items):
        v = b_raw(items)
        seen[0] = max(seen[0], float(np.abs(v).max()) if v.size else 0.0)
        return v

    if objects is None:
        objects = sorted({o for lab in retracts for o in lab})
    out = {}
    for N in range(1, k_max + 1):
        worst = 0.0
        for chain in itertools.combinations(objects, N + 1):
            labels = [(chain[j], chain[j + 1]) for j in range(N)][::-1]  # left to right
            dims = [retracts[l].P.shape[0] for l in labels]
            for idx in itertools.product(*[range(d) for d in dims]):
                items = tuple(zip(labels, idx))
                sdeg = [int(retracts[l].small_deg[i]) - 1 for l, i in items]
                total = None
                for r in range(N):
                    for j in range(1, N - r + 1):
                        inner = b(items[r : r + j])
                        sign = _sg(sum(sdeg[:r]))
                        lab_in = (items[r + j - 1][0][0], items[r][0][1])
                        for c, coef in enumerate(inner):
                            if coef == 0.0:
                                continue
                            term = sign * coef * b(items[:r] + ((lab_in, c),) + items[r + j :])
                            total = term if total is None else total + term
                if total is not None:
                    worst = max(worst, float(np.abs(total).max()))
        worst /= max(seen[0] ** 2, 1e-300)
        out[N] = worst
    return out


def random_toy_retracts(objects: int = 4, n: int = 3, seed: int = 0, hbar: float = 1.0) -> dict[tuple[int, int], MatrixRetract]:
    """Twisted cochain complexes of a 3-vertex circle (dimension 2n = 6) with random retracts.

    Each f_i is random on the nodes, Ω_ij carries the conjugated
    difference operator of f_ij = f_j - f_i, so the twisted cup product is
    associative and Leibniz holds exactly. The retract onto a random
    cohomology representative with random complements is exact by
    construction.
    """
    rng = np.random.default_rng(seed)
    F = [rng.normal(scale=0.7, size=n) for _ in range(objects)]
    out = {}
    for i in range(objects):
        for j in range(i + 1, objects):
            f = F[j] - F[i]
            delta = np.roll(f, -1) - f
            d = np.zeros((n, n))
            r = np.arange(n)
            d[r, (r + 1) % n] = hbar * np.exp(delta / (2 * hbar))
            d[r, r] = -hbar * np.exp(-delta / (2 * hbar))
            out[(i, j)] = _random_retract((i, j), d, rng, np.exp(-delta / (2 * hbar)), np.exp(delta / (2 * hbar)))
    return out


def _random_retract(label, d: np.ndarray, rng, half_minus, half_plus, extra: int = 1) -> MatrixRetract:
    n = d.shape[0]
    N = 2 * n
    D = np.zeros((N, N))
    D[n:, :n] = d
    # deg 0: kernel, `extra` non-closed vectors kept in the small space, then a complement;
    # deg 1: a random representative, d of the extra vectors, then the rest of im d
    u, s, vt = np.linalg.svd(d)
    rank = int((s > 1e-10 * s[0]).sum())
    extra = min(extra, rank)
    K0 = vt[rank:].T
    C = rng.normal(size=(n, rank))
    C = C - K0 @ (K0.T @ C) + 0.3 * K0 @ rng.normal(size=(K0.shape[1], rank))
    imd = d @ C
    Q1 = rng.normal(size=(n, n - rank))
    B0 = np.column_stack([K0 * rng.uniform(0.5, 2.0), C])
    B1 = np.column_stack([Q1, imd])
    h0 = K0.shape[1] + extra
    h1 = n - rank + extra
    inv0, inv1 = np.linalg.inv(B0), np.linalg.inv(B1)
    I = np.zeros((N, h0 + h1))
    I[:n, :h0] = B0[:, :h0]
    I[n:, h0:] = B1[:, :h1]
    P = np.zeros((h0 + h1, N))
    P[:h0, :n] = inv0[:h0]
    P[h0:, n:] = inv1[:h1]
    H = np.zeros((N, N))
    H[:n, n:] = C[:, extra:] @ inv1[h1:]
    small_deg = np.array([0] * h0 + [1] * h1)
    return MatrixRetract(label, n, D, I, P, H, small_deg, half_minus, half_plus)


def retract_from_dense(label, w, S0, S1, hom) -> MatrixRetract:
    """MatrixRetract from the dense spectral pipeline (orthonormal small bases)."""
    from .discrete_derham import witten_d

    n = w.grid.n
    d = witten_d(w).matrix
    D = np.zeros((2 * n, 2 * n))
    D[n:, :n] = d
    s0, s1 = S0.dim, S1.dim
    I = np.zeros((2 * n, s0 + s1))
    I[:n, :s0] = S0.vectors
    I[n:, s0:] = S1.vectors
    P = I.T.copy()
    H = np.zeros((2 * n, 2 * n))
    H[:n, n:] = hom.H.matrix
    delta = w.delta / w.hbar
    return MatrixRetract(label, n, D, I, P, H, np.array([0] * s0 + [1] * s1), np.exp(-delta / 2), np.exp(delta / 2))
