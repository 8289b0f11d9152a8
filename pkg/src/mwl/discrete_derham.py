"""Discrete de Rham complex of the circle and its Witten deformation.

Two schemes share one interface.

``dec`` (default): 0-cochains at nodes, 1-cochains on edges (values at
midpoints). The deformed differential is the exact conjugate of the
difference operator,

    (d_f u)_i = (ℏ/h) (e^{δ_i/2ℏ} u_{i+1} - e^{-δ_i/2ℏ} u_i),  δ_i = f_{i+1} - f_i,

so ker d_f = e^{-f/ℏ} and ker d_f^T = e^{f_e/ℏ} hold exactly, and in the
gauge u = e^{-f/ℏ} U every solve is a cumulative sum. The twisted cup
product below is associative and satisfies the Leibniz rule exactly.

``spectral``: collocated nodes with Fourier differentiation (odd n), a
pointwise graded-commutative wedge, and d_f = ℏD + f'.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import gmpy2
import numpy as np
from scipy.linalg import toeplitz

from .morse_circle import PeriodicFunction


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class CircleGrid:
    n: int
    scheme: str = "dec"

    def __post_init__(self):
        if self.n < 16:
            raise ValueError("grid needs n >= 16")
        if self.scheme not in ("dec", "spectral"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "spectral" and self.n % 2 == 0:
            raise ValueError("spectral scheme needs odd n (even n leaves a spurious Nyquist null mode)")

    @property
    def h(self) -> float:
        return 2.0 * math.pi / self.n

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    @property
    def theta_edges(self) -> np.ndarray:
        """Sample sites of 1-cochains."""
        return self.theta + (0.5 * self.h if self.scheme == "dec" else 0.0)

    def sites(self, degree: int) -> np.ndarray:
        return self.theta if degree == 0 else self.theta_edges


@dataclass(frozen=True)
class Cochain:
    degree: int
    values: np.ndarray

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise ValueError("degree must be 0 or 1 (2 marks the trivial top product)")

    @property
    def trivial(self) -> bool:
        return self.degree == 2


@dataclass(frozen=True)
class LinearMap:
    matrix: np.ndarray
    src: int
    dst: int

    def __matmul__(self, other):
        if isinstance(other, LinearMap):
            if other.dst != self.src:
                raise ValueError(f"cannot compose deg {other.src}->{other.dst} with {self.src}->{self.dst}")
            return LinearMap(self.matrix @ other.matrix, other.src, self.dst)
        if isinstance(other, Cochain):
            if other.degree != self.src:
                raise ValueError("degree mismatch")
            return Cochain(self.dst, self.matrix @ other.values)
        return self.matrix @ other

    @property
    def T(self) -> "LinearMap":
        return LinearMap(self.matrix.T, self.dst, self.src)


@dataclass
class WittenData:
    grid: CircleGrid
    f: PeriodicFunction
    hbar: float
    samples: np.ndarray = field(init=False)
    slope: np.ndarray = field(init=False)
    curvature: np.ndarray = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.hbar <= 1.0):
            raise ValueError("ℏ must lie in (0, 1]")
        self.f = PeriodicFunction.from_config(self.f)
        th = self.grid.theta
        self.samples = np.asarray(self.f(th), dtype=float)
        self.slope = np.asarray(self.f.deriv(th, 1), dtype=float)
        self.curvature = np.asarray(self.f.deriv(th, 2), dtype=float)

    @property
    def delta(self) -> np.ndarray:
        return np.roll(self.samples, -1) - self.samples


def _fourier_d(n: int) -> np.ndarray:
    h = 2 * math.pi / n
    k = np.arange(1, n)
    col = np.zeros(n)
    col[1:] = 0.5 * (-1.0) ** k / (np.sin(k * h / 2) if n % 2 else np.tan(k * h / 2))
    return toeplitz(col, -col)


def _fourier_d2(n: int) -> np.ndarray:
    # second derivative with the symmetric treatment of the top mode (odd n: exact)
    h = 2 * math.pi / n
    k = np.arange(1, n)
    col = np.zeros(n)
    if n % 2:
        col[0] = -(n * n - 1) / 12.0
        col[1:] = -0.5 * (-1.0) ** k * np.cos(k * h / 2) / np.sin(k * h / 2) ** 2
    else:
        col[0] = -(n * n) / 12.0 - 1.0 / 6.0
        col[1:] = -0.5 * (-1.0) ** k / np.sin(k * h / 2) ** 2
    return toeplitz(col)


def build_d(g: CircleGrid) -> LinearMap:
    """Exterior derivative on 0-cochains."""
    if g.scheme == "spectral":
        return LinearMap(_fourier_d(g.n), 0, 1)
    n = g.n
    m = (np.roll(np.eye(n), 1, axis=1) - np.eye(n)) / g.h
    return LinearMap(m, 0, 1)


def witten_d(w: WittenData) -> LinearMap:
    g, hb = w.grid, w.hbar
    if g.scheme == "spectral":
        return LinearMap(hb * _fourier_d(g.n) + np.diag(w.slope), 0, 1)
    n = g.n
    dl = w.delta
    m = np.zeros((n, n))
    i = np.arange(n)
    m[i, (i + 1) % n] = hb / g.h * np.exp(dl / (2 * hb))
    m[i, i] = -hb / g.h * np.exp(-dl / (2 * hb))
    return LinearMap(m, 0, 1)


def witten_adjoint(w: WittenData) -> LinearMap:
    """Adjoint for the h-weighted inner products on both degrees, i.e. the transpose."""
    return witten_d(w).T


def witten_laplacian(w: WittenData, degree: int, route: str = "composition") -> LinearMap:
    """Δ_0 = d*d or Δ_1 = dd* (the circle has no 2-forms).

    route="formula" assembles the same operator from the closed form:
    spectral: -ℏ²∂² + f'² ∓ ℏf'' (minus on functions, plus on 1-forms);
    dec: the tridiagonal stencil of the conjugated difference Laplacian.
    """
    if degree not in (0, 1):
        raise ValueError("degree must be 0 or 1")
    if route == "composition":
        d = witten_d(w).matrix
        m = d.T @ d if degree == 0 else d @ d.T
    elif route == "formula":
        m = _laplacian_formula(w, degree)
    else:
        raise ValueError(f"unknown route {route!r}")
    asym = np.abs(m - m.T).max() / max(np.abs(m).max(), 1e-300)
    if asym > 1e-10:
        raise AssemblyError(f"Laplacian asymmetric: {asym:.2e}")
    return LinearMap(0.5 * (m + m.T), degree, degree)


def _laplacian_formula(w: WittenData, degree: int) -> np.ndarray:
    g, hb, n = w.grid, w.hbar, w.grid.n
    if g.scheme == "spectral":
        sgn = -1.0 if degree == 0 else 1.0
        return -hb * hb * _fourier_d2(n) + np.diag(w.slope**2 + sgn * hb * w.curvature)
    c = (hb / g.h) ** 2
    dl = w.delta
    i = np.arange(n)
    m = np.zeros((n, n))
    if degree == 0:
        m[i, i] = c * (np.exp(-dl / hb) + np.exp(np.roll(dl, 1) / hb))
        m[i, (i + 1) % n] = -c
        m[(i + 1) % n, i] = -c
    else:
        m[i, i] = 2 * c * np.cosh(dl / hb)
        off = -c * np.exp((dl - np.roll(dl, -1)) / (2 * hb))
        m[i, (i + 1) % n] = off
        m[(i + 1) % n, i] = off
    return m


def wedge(a: Cochain, b: Cochain, grid: CircleGrid, twist_a: np.ndarray | None = None, twist_b: np.ndarray | None = None) -> Cochain:
    """a ∧ b for a ∈ Ω_jk, b ∈ Ω_ij.

    On the dec scheme ``twist_a`` / ``twist_b`` are δ/ℏ of f_jk / f_ij; with
    them the product intertwines the deformed differentials. Without them
    it is the plain simplicial cup product.
    """
    deg = a.degree + b.degree
    if deg > 1:
        return Cochain(2, np.zeros_like(np.asarray(a.values)))
    if grid.scheme == "spectral" or deg == 0:
        return Cochain(deg, a.values * b.values)
    if a.degree == 0:
        shifted = a.values if twist_a is None else a.values * np.exp(-0.5 * twist_a)
        return Cochain(1, shifted * b.values)
    right = np.roll(b.values, -1)
    if twist_b is not None:
        right = right * np.exp(0.5 * twist_b)
    return Cochain(1, a.values * right)


def export_operator(L: LinearMap, path: str | Path, fmt: str | None = None) -> Path:
    """Write a dense operator: CSV with a header line, or .npy."""
    path = Path(path)
    fmt = fmt or ("npy" if path.suffix == ".npy" else "csv")
    m = np.asarray(L.matrix, dtype=float)
    if fmt == "npy":
        np.save(path, m)
    else:
        with open(path, "w") as fh:
            fh.write(f"# n={m.shape[0]} src_degree={L.src} dst_degree={L.dst}\n")
            np.savetxt(fh, m, delimiter=",", fmt="%.17g")
    return path


def load_operator_csv(path: str | Path) -> LinearMap:
    with open(path) as fh:
        head = fh.readline().lstrip("# ").split()
    meta = dict(kv.split("=") for kv in head)
    m = np.loadtxt(path, delimiter=",", comments="#")
    return LinearMap(m, int(meta["src_degree"]), int(meta["dst_degree"]))


# ---------------------------------------------------------------------------
# Arbitrary-precision dec complex. Arrays are numpy object arrays of mpfr so
# that exponentially small eigenform tails survive; every operator is banded
# and applied matrix-free.

_mexp = np.frompyfunc(gmpy2.exp, 1, 1)
_mlog = np.frompyfunc(gmpy2.log, 1, 1)


def mp_digits_for(hbar: float, oscillation: float) -> int:
    """Decimal digits needed to carry weights e^{±osc/ℏ} with ~30 digits to spare."""
    return 30 + int(math.ceil(3.0 * oscillation / hbar / math.log(10)))


def mp_exp(x: np.ndarray) -> np.ndarray:
    return _mexp(x)


def mp_array(x) -> np.ndarray:
    return np.array([gmpy2.mpfr(float(v)) if not isinstance(v, type(gmpy2.mpfr(0))) else v for v in x], dtype=object)


def to_float(x: np.ndarray) -> np.ndarray:
    return np.array([float(v) for v in x])


def log_abs(x) -> float:
    return float(gmpy2.log(abs(x))) if x != 0 else -math.inf


class MpWitten:
    """Exact-conjugation dec complex for one f_ij at one ℏ, in mpfr arithmetic.

    Build inside a ``gmpy2.context`` with enough precision; see
    :func:`mp_digits_for`.
    """

    def __init__(self, f: PeriodicFunction, hbar: float, n: int, f_values: np.ndarray | None = None):
        self.f = f
        self.n = n
        self.pi = gmpy2.const_pi()
        self.h = 2 * self.pi / n
        self.hbar = gmpy2.mpfr(hbar)
        self.theta = np.array([self.h * i for i in range(n)], dtype=object)
        self.fv = f.mp_values(self.theta) if f_values is None else f_values
        self.fe = (self.fv + np.roll(self.fv, -1)) / 2
        self.c = self.hbar / self.h
        self.E0 = _mexp(self.fv / self.hbar)
        self.E0i = _mexp(-self.fv / self.hbar)
        self.E1 = _mexp(self.fe / self.hbar)
        self.E1i = _mexp(-self.fe / self.hbar)
        self.ker0 = self.normalize(self.E0i)
        self.ker1 = self.normalize(self.E1)

    # inner products carry the grid weight h
    def ip(self, a, b):
        return self.h * np.dot(a, b)

    def norm(self, a):
        return gmpy2.sqrt(self.ip(a, a))

    def normalize(self, a):
        return a / self.norm(a)

    def d(self, u):
        v = self.E0 * u
        return self.c * self.E1i * (np.roll(v, -1) - v)

    def dT(self, w):
        z = self.E1i * w
        return self.c * self.E0 * (np.roll(z, 1) - z)

    def solve_d(self, r):
        """Particular u with d u = r (r must be orthogonal to ker d^T)."""
        t = self.E1 * r / self.c
        v = np.empty(self.n, dtype=object)
        v[0] = gmpy2.mpfr(0)
        v[1:] = np.cumsum(t)[:-1]
        return self.E0i * v

    def solve_dT(self, s):
        """Particular y with d^T y = s (s must be orthogonal to ker d)."""
        t = self.E0i * s / self.c
        return -self.E1 * np.cumsum(t)

    @staticmethod
    def _remove(x, basis, ip):
        for q in basis:
            x = x - q * ip(q, x)
        return x

    def pinv(self, degree: int, b):
        """Moore-Penrose inverse of Δ_degree applied to b."""
        if degree == 0:
            b = self._remove(b, [self.ker0], self.ip)
            y = self._remove(self.solve_dT(b), [self.ker1], self.ip)
            return self._remove(self.solve_d(y), [self.ker0], self.ip)
        b = self._remove(b, [self.ker1], self.ip)
        z = self._remove(self.solve_d(b), [self.ker0], self.ip)
        return self._remove(self.solve_dT(z), [self.ker1], self.ip)

    def apply_laplacian(self, degree: int, u):
        return self.dT(self.d(u)) if degree == 0 else self.d(self.dT(u))
