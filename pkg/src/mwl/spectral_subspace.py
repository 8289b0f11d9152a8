"""Small-eigenvalue subspaces, Green operators, homotopies and eigenform bases.

Two back ends:

* dense float64 (``small_spectrum`` / ``green`` / ``homotopy`` / ``phi_map``):
  full symmetric eigendecomposition; used for counting, gap diagnostics
  and the operator identities.
* arbitrary precision (:class:`MpRetract`): the dec complex in mpfr
  arithmetic, where every inverse is a cumulative sum in the e^{∓f/ℏ}
  gauge. Needed because the products of interest are of size e^{-A/ℏ},
  far below float64 resolution of the eigenvector tails.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from .discrete_derham import (
    CircleGrid,
    LinearMap,
    MpWitten,
    WittenData,
    mp_exp,
    witten_d,
    witten_laplacian,
)
from .morse_circle import TWO_PI, CriticalPoint, PeriodicFunction, agmon_distance, critical_points


class RegimeError(RuntimeError):
    """ℏ (or n) outside the range where the small subspace matches the Morse complex."""


class ConditioningError(RuntimeError):
    pass


class LocalizationError(RuntimeError):
    pass


GAP_WARN = 10.0
GAP_FLOOR = 1.0
# largest admissible h·max|f'|/ℏ: the grid must resolve the e^{-f/ℏ} profiles
RESOLUTION_MAX = 0.5


@dataclass
class SmallSubspace:
    degree: int
    hbar: float
    eigenvalues: np.ndarray
    vectors: np.ndarray  # orthonormal columns (Euclidean = h-weighted up to scale)
    gap_ratio: float
    all_eigenvalues: np.ndarray
    expected_dim: int | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def P(self) -> LinearMap:
        return LinearMap(self.vectors @ self.vectors.T, self.degree, self.degree)

    def report(self) -> dict:
        return {
            "hbar": self.hbar,
            "degree": self.degree,
            "small_eigs": [float(x) for x in self.eigenvalues],
            "gap_ratio": float(self.gap_ratio),
            "dim": self.dim,
            "expected_dim": self.expected_dim,
            "flags": list(self.flags),
        }


def small_spectrum(lap: LinearMap, hbar: float, expected_dim: int | None = None, gap_warn: float = GAP_WARN) -> SmallSubspace:
    """Eigenpairs of Δ below ℏ^{3/2}.

    gap_ratio = (first excluded eigenvalue) / ℏ^{3/2}. A dimension
    mismatch with the Morse count raises RegimeError; a gap ratio below
    ``gap_warn`` is flagged and warned about.
    """
    m = lap.matrix
    if np.abs(m - m.T).max() > 1e-10 * max(np.abs(m).max(), 1e-300):
        raise ValueError("Laplacian is not symmetric")
    evals, evecs = np.linalg.eigh(m)
    cut = hbar**1.5
    small = evals < cut
    dim = int(small.sum())
    nxt = evals[dim] if dim < len(evals) else math.inf
    ratio = float(nxt / cut)
    S = SmallSubspace(lap.src, hbar, evals[:dim].copy(), evecs[:, :dim].copy(), ratio, evals, expected_dim)
    if expected_dim is not None and dim != expected_dim:
        raise RegimeError(
            f"degree {lap.src}: {dim} eigenvalues below ℏ^1.5={cut:.3e}, expected {expected_dim}; "
            f"lowest {evals[: expected_dim + 2]}; decrease ℏ or increase n"
        )
    if ratio < gap_warn:
        S.flags.append(f"gap_ratio {ratio:.2f} < {gap_warn}")
        warnings.warn(f"weak spectral gap at ℏ={hbar}: ratio {ratio:.2f}", stacklevel=2)
    return S


def green(lap: LinearMap, S: SmallSubspace) -> LinearMap:
    """Pseudo-inverse of Δ on the orthogonal complement of the small subspace."""
    m = lap.matrix
    evals, evecs = np.linalg.eigh(m)
    big = evals[S.dim :]
    if big.size and big[0] < 1e-12 * np.abs(evals).max():
        raise ConditioningError(f"first excluded eigenvalue {big[0]:.2e} is numerically zero")
    V = evecs[:, S.dim :]
    return LinearMap((V / big) @ V.T, lap.src, lap.src)


@dataclass
class HomotopyData:
    G0: LinearMap
    G1: LinearMap
    H: LinearMap  # degree 1 -> 0; H vanishes on 0-cochains
    residual0: float
    residual1: float

    @property
    def residual(self) -> float:
        return max(self.residual0, self.residual1)


def homotopy(w: WittenData, S0: SmallSubspace, S1: SmallSubspace, lap0: LinearMap | None = None, lap1: LinearMap | None = None) -> HomotopyData:
    """H = d* G with the identity dH + Hd = I - P checked on both degrees."""
    lap0 = lap0 or witten_laplacian(w, 0)
    lap1 = lap1 or witten_laplacian(w, 1)
    G0, G1 = green(lap0, S0), green(lap1, S1)
    d = witten_d(w).matrix
    H = d.T @ G1.matrix
    n = d.shape[0]
    I = np.eye(n)
    r0 = _rel(H @ d, I - S0.P.matrix)
    r1 = _rel(d @ H, I - S1.P.matrix)
    if max(r0, r1) > 1e-6:
        raise RuntimeError(f"homotopy identity residual {max(r0, r1):.2e}: subspaces of the two degrees disagree")
    return HomotopyData(G0, G1, LinearMap(H, 1, 0), r0, r1)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b, 2) / max(np.linalg.norm(b, 2), 1e-300))


def identity_residuals(lap: LinearMap, S: SmallSubspace, G: LinearMap) -> dict:
    P = S.P.matrix
    I = np.eye(P.shape[0])
    return {
        "P2=P": _rel(P @ P, P),
        "P=P^T": _rel(P.T, P),
        "ΔG=I-P": _rel(lap.matrix @ G.matrix, I - P),
        "GΔ=I-P": _rel(G.matrix @ lap.matrix, I - P),
    }


def hbar_floor(f: PeriodicFunction, n: int) -> float:
    return TWO_PI / n * f.max_slope() / RESOLUTION_MAX


def regime_check(f: PeriodicFunction, hbar: float, n: int, gap_warn: float = GAP_WARN) -> dict:
    """Dense eigen-report for both degrees plus the grid-resolution floor.

    Raises RegimeError below the floor, on a count mismatch, or when the
    gap ratio drops under GAP_FLOOR; weak gaps only add flags.
    """
    floor = hbar_floor(f, n)
    if hbar < floor:
        raise RegimeError(f"ℏ={hbar} below the grid floor {floor:.4g} for n={n}; increase n")
    w = WittenData(CircleGrid(n), f, hbar)
    dims = expected_dims(f)
    out = {"hbar": hbar, "n": n, "floor": floor, "degrees": [], "flags": []}
    for deg in (0, 1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            S = small_spectrum(witten_laplacian(w, deg, route="formula"), hbar, dims[deg], gap_warn)
        if S.gap_ratio < GAP_FLOOR:
            raise RegimeError(f"degree {deg}: gap ratio {S.gap_ratio:.3g} below {GAP_FLOOR}")
        rep = S.report()
        rep.pop("small_eigs")
        out["degrees"].append(rep)
        out["flags"] += [f"degree {deg}: {fl}" for fl in S.flags]
    return out


def expected_dims(f: PeriodicFunction) -> tuple[int, int]:
    cs = critical_points(f)
    return sum(c.index == 0 for c in cs), sum(c.index == 1 for c in cs)


# ---------------------------------------------------------------------------
# localization into a critical-point basis


def _lagrange4(x_nodes, y_nodes, x):
    out = 0
    for i in range(4):
        li = 1
        for j in range(4):
            if j != i:
                li = li * (x - x_nodes[j]) / (x_nodes[i] - x_nodes[j])
        out = out + li * y_nodes[i]
    return out


def _gauge_value(values, gauge, sites_offset, h, theta, n):
    """Interpolate gauge*values at angle theta from the 4 nearest sites."""
    s = (theta - sites_offset) / h
    i0 = int(math.floor(s)) - 1
    idx = [(i0 + j) % n for j in range(4)]
    xs = [i0 + j for j in range(4)]
    ys = [values[i] * gauge[i] for i in idx]
    return _lagrange4(xs, ys, s)


def _solve_small(A, B):
    """Gaussian elimination with partial pivoting on object arrays (mpfr or float)."""
    A = [list(r) for r in A]
    B = [list(r) for r in B]
    m = len(A)
    for c in range(m):
        p = max(range(c, m), key=lambda r: abs(A[r][c]))
        A[c], A[p] = A[p], A[c]
        B[c], B[p] = B[p], B[c]
        for r in range(m):
            if r != c:
                fac = A[r][c] / A[c][c]
                A[r] = [a - fac * b for a, b in zip(A[r], A[c])]
                B[r] = [a - fac * b for a, b in zip(B[r], B[c])]
    return [[b / A[i][i] for b in B[i]] for i in range(m)]


def _basin(crits: list[CriticalPoint], q: CriticalPoint) -> tuple[float, float]:
    """(cw neighbor, ccw neighbor) angles of q in the sorted critical list."""
    i = next(j for j, c in enumerate(crits) if c.theta == q.theta)
    return crits[i - 1].theta, crits[(i + 1) % len(crits)].theta


def _arc_mask(sites, a, b):
    L = (b - a) % TWO_PI or TWO_PI
    s = np.mod(np.asarray(sites, dtype=float) - a, TWO_PI)
    return (s > 0) & (s < L)


@dataclass
class EigenformBasis:
    degree: int
    criticals: list[CriticalPoint]
    phi: dict[float, np.ndarray]  # keyed by critical angle
    normalization: dict[float, object]
    closed_form: dict[float, float]

    def __getitem__(self, q: CriticalPoint):
        return self.phi[q.theta]


def closed_form_constant(q: CriticalPoint, hbar: float) -> float:
    """(|λ-|/|λ+|)^{1/4} (πℏ)^{(n/2 - deg)/2} on the circle (n = 1)."""
    lam = abs(q.hessian)
    ratio = lam ** (0.25 if q.index == 1 else -0.25)
    return ratio * (math.pi * hbar) ** ((0.5 - q.index) / 2)


def phi_map_dense(S: SmallSubspace, crits: list[CriticalPoint], w: WittenData) -> EigenformBasis:
    """Float64 version of the localized basis (moderate ℏ only)."""
    g = w.grid
    if g.scheme != "dec":
        raise ValueError("phi_map_dense implemented for the dec scheme")
    return _phi_map(
        S.degree,
        [S.vectors[:, j] / math.sqrt(g.h) for j in range(S.dim)],
        crits,
        w.samples,
        w.hbar,
        g.h,
        g.n,
        exp=np.exp,
        ip=lambda a, b: g.h * float(np.dot(a, b)),
    )


def _phi_map(degree, vectors, crits, fv, hbar, h, n, exp, ip):
    """Nodal localized basis with unstable-manifold normalization.

    φ̂_q is the subspace element whose gauge value e^{(f-f(q))/ℏ}φ at q is 1
    and which vanishes at the other critical points of the same index;
    then ∫_{V^-_q} e^{(f-f(q))/ℏ} φ_q = 1 is imposed on the discrete level
    (for degree 0, V^-_q = {q} and the nodal condition already gives it).
    """
    pts = [c for c in crits if c.index == degree]
    if len(pts) != len(vectors):
        raise LocalizationError(f"{len(vectors)} subspace vectors for {len(pts)} critical points of index {degree}")
    sites_f = fv if degree == 0 else (fv + np.roll(fv, -1)) / 2
    offset = 0.0 if degree == 0 else 0.5 * h
    E = []
    for q in pts:
        gauge = exp((sites_f - q.value) / hbar)
        E.append([_gauge_value(v, gauge, offset, float(h), q.theta, n) for v in vectors])
    ident = [[1 if i == j else 0 for j in range(len(pts))] for i in range(len(pts))]
    C = _solve_small(E, ident)
    phi, norm, closed = {}, {}, {}
    for j, q in enumerate(pts):
        v = sum(vectors[l] * C[l][j] for l in range(len(vectors)))
        if degree == 1:
            a, b = _basin(crits, q)
            mask = _arc_mask(np.arange(n) * float(h) + offset, a, b)
            gauge = exp((sites_f - q.value) / hbar)
            integral = h * np.sum((gauge * v)[mask])
            v = v / integral
            norm[q.theta] = integral
        else:
            norm[q.theta] = 1
        phi[q.theta] = v
        closed[q.theta] = closed_form_constant(q, float(hbar))
    return EigenformBasis(degree, pts, phi, norm, closed)


# ---------------------------------------------------------------------------
# arbitrary precision retract


class MpRetract:
    """Small subspaces, localized basis and homotopy for one f_ij at one ℏ.

    Construct inside a ``gmpy2.context`` with enough precision (see mp_precision_bits).
    """

    def __init__(self, f: PeriodicFunction, hbar: float, n: int, f_values=None, max_iter: int = 80):
        self.f = f
        self.hbar = hbar
        self.n = n
        self.cx = MpWitten(f, hbar, n, f_values)
        self.crits = critical_points(f)
        cx = self.cx
        self.delta = (np.roll(cx.fv, -1) - cx.fv) / cx.hbar
        self.half_minus = mp_exp(-self.delta / 2)
        self.half_plus = mp_exp(self.delta / 2)
        self.iterations = {}
        self.on = {0: self._small(0, max_iter), 1: self._small(1, max_iter)}
        self.basis = {
            deg: _phi_map(
                deg,
                list(self.on[deg]),
                self.crits,
                cx.fv,
                cx.hbar,
                cx.h,
                n,
                exp=mp_exp,
                ip=cx.ip,
            )
            for deg in (0, 1)
        }

    def _quasimodes(self, degree: int):
        cx = self.cx
        pts = [c for c in self.crits if c.index == degree]
        # the kernel already covers the deepest well; drop its quasimode
        drop = min(pts, key=lambda c: c.value) if degree == 0 else max(pts, key=lambda c: c.value)
        sites = np.arange(self.n) * float(cx.h) + (0.0 if degree == 0 else 0.5 * float(cx.h))
        vals = cx.fv if degree == 0 else cx.fe
        out = []
        for q in pts:
            if q is drop:
                continue
            a, b = _basin(self.crits, q)
            mask = _arc_mask(sites, a, b)
            sgn = -1 if degree == 0 else 1
            v = mp_exp(sgn * (vals - q.value) / cx.hbar)
            v = np.where(mask, v, gmpy2.mpfr(0))
            out.append(v)
        return out

    def _orth(self, vs, fixed=()):
        ip = self.cx.ip
        out = list(fixed)
        for v in vs:
            for _ in range(2):
                for q in out:
                    v = v - q * ip(q, v)
            out.append(v / self.cx.norm(v))
        return out[len(fixed) :]

    def _small(self, degree: int, max_iter: int):
        cx = self.cx
        ker = cx.ker0 if degree == 0 else cx.ker1
        X = self._orth(self._quasimodes(degree), fixed=[ker])
        tol = gmpy2.mpfr(10) ** (-(gmpy2.get_context().precision * 0.30103 - 25))
        it = 0
        for it in range(1, max_iter + 1):
            if not X:
                break
            Y = self._orth([cx.pinv(degree, x) for x in X], fixed=[ker])
            change = max(cx.norm(y - sum((x * cx.ip(x, y) for x in X), 0 * y)) for y in Y)
            X = Y
            if change < tol:
                break
        self.iterations[degree] = it
        return [ker] + X

    # orthogonal projector onto the small subspace
    def project(self, x, degree: int):
        ip = self.cx.ip
        return sum((q * ip(q, x) for q in self.on[degree]), 0 * x)

    def homotopy(self, x, degree: int):
        """H = d*G: zero on 0-forms, on 1-forms the solution of du = (I-P)x orthogonal to the small subspace."""
        if degree == 0:
            return 0 * x
        r = x - self.project(x, 1)
        u = self.cx.solve_d(r)
        return u - self.project(u, 0)

    def green(self, x, degree: int):
        y = x - self.project(x, degree)
        y = self.cx.pinv(degree, y)
        return y - self.project(y, degree)

    def d(self, x):
        return self.cx.d(x)

    def small_eigenvalues(self, degree: int):
        cx = self.cx
        return [cx.ip(q, cx.apply_laplacian(degree, q)) for q in self.on[degree]]

    def phi(self, q: CriticalPoint):
        return self.basis[q.index][q]

    def norm2(self, x):
        return self.cx.ip(x, x)

    def ip(self, x, y):
        return self.cx.ip(x, y)


def mp_precision_bits(hbar: float, oscillation: float) -> int:
    from .discrete_derham import mp_digits_for

    return int(mp_digits_for(hbar, oscillation) * 3.3219281) + 16


# ---------------------------------------------------------------------------
# decay diagnostics


def _fit_rate(hbars, logs):
    """Least squares log|v| = -rate/ℏ + p log ℏ + c; returns (rate, p, c)."""
    hb = np.asarray(hbars, dtype=float)
    X = np.column_stack([-1.0 / hb, np.log(hb), np.ones_like(hb)])
    coef, *_ = np.linalg.lstsq(X, np.asarray(logs, dtype=float), rcond=None)
    return float(coef[0]), float(coef[1]), float(coef[2])


def green_kernel_logs(f: PeriodicFunction, n: int, hbar: float, y: float, xs, degree: int = 0) -> list[float]:
    """log|G(δ_y)(x)| for a unit-mass point source at the node nearest y."""
    bits = mp_precision_bits(hbar, f.oscillation())
    with gmpy2.context(gmpy2.get_context(), precision=bits):
        R = MpRetract(f, hbar, n)
        cx = R.cx
        src = np.array([gmpy2.mpfr(0)] * n, dtype=object)
        h = float(cx.h)
        offset = 0.0 if degree == 0 else 0.5 * h
        iy = int(round((y - offset) / h)) % n
        src[iy] = 1 / cx.h
        u = R.green(src, degree)
        out = []
        for x in xs:
            ix = int(round((x - offset) / h)) % n
            out.append(float(gmpy2.log(abs(u[ix]))) if u[ix] != 0 else -math.inf)
        return out


def green_decay_probe(f: PeriodicFunction, n: int, y: float, xs, hbar_list, degree: int = 0) -> list[dict]:
    """Decay rate of the Green kernel from y to each x, fitted over ℏ."""
    hbar_list = sorted(hbar_list, reverse=True)
    if len(hbar_list) < 4:
        raise ValueError("need at least 4 ℏ values")
    table = np.array([green_kernel_logs(f, n, hb, y, xs, degree) for hb in hbar_list])
    if not np.all(np.isfinite(table)):
        raise ValueError("underflow in Green kernel samples; insufficient dynamic range")
    crits = critical_points(f)
    out = []
    for j, x in enumerate(xs):
        rate, p, c = _fit_rate(hbar_list, table[:, j])
        out.append({"x": float(x), "y": float(y), "rate_est": rate, "power": p, "agmon_ref": agmon_distance(f, x, y, crits), "logs": table[:, j].tolist(), "hbar": list(hbar_list)})
    return out


def eigenform_decay_slope(R: MpRetract, q: CriticalPoint, xs) -> tuple[float, list[float], list[float]]:
    """Slope of ℏ·log|φ_q(x)| against -ρ(q,x) over sample points."""
    phi = R.phi(q)
    h = float(R.cx.h)
    offset = 0.0 if q.index == 0 else 0.5 * h
    rho, vals = [], []
    for x in xs:
        ix = int(round((x - offset) / h)) % R.n
        xs_site = ix * h + offset
        rho.append(agmon_distance(R.f, q.theta, xs_site, R.crits))
        vals.append(R.hbar * float(gmpy2.log(abs(phi[ix]))))
    A = np.column_stack([-np.asarray(rho), np.ones(len(rho))])
    coef, *_ = np.linalg.lstsq(A, np.asarray(vals), rcond=None)
    return float(coef[0]), rho, vals


def gram_matrix(R: MpRetract, degree: int):
    B = R.basis[degree]
    pts = B.criticals
    G = [[R.cx.ip(B[p], B[q]) for q in pts] for p in pts]
    return pts, G


def normalized_gram_offdiag_log(R: MpRetract, degree: int) -> dict:
    """log|⟨φ_p,φ_q⟩|/(‖φ_p‖‖φ_q‖) for p ≠ q."""
    pts, G = gram_matrix(R, degree)
    out = {}
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            if i < j:
                v = abs(G[i][j]) / gmpy2.sqrt(G[i][i] * G[j][j])
                out[(p.theta, q.theta)] = float(gmpy2.log(v)) if v != 0 else -math.inf
    return out


def gram_offdiag_slope(f: PeriodicFunction, hbar_list, n: int = 1024, degree: int = 0) -> dict:
    """Fit -log|normalized ⟨φ_p,φ_q⟩| against 1/ℏ for every same-index pair p ≠ q.

    Returns per pair the slope and S₀ = ρ(p, q).
    """
    crits = critical_points(f)
    table: dict = {}
    for hb in hbar_list:
        with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(hb, f.oscillation())):
            R = MpRetract(f, hb, n)
            for key, val in normalized_gram_offdiag_log(R, degree).items():
                table.setdefault(key, []).append(val)
    inv = 1.0 / np.asarray(hbar_list, dtype=float)
    out = []
    for (a, b), logs in sorted(table.items()):
        slope = float(-np.polyfit(inv, np.asarray(logs), 1)[0])
        out.append({"p": a, "q": b, "slope": slope, "S0": agmon_distance(f, a, b, crits)})
    return {"degree": degree, "pairs": out}
