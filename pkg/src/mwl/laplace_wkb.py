"""Laplace-method expansions and WKB transport along a 1D flow line.

Taylor data at the critical point come from a Cauchy integral on a small
circle, so phases and amplitudes must accept complex numpy arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import gmpy2
import numpy as np
from scipy.integrate import cumulative_simpson, quad

from .morse_circle import MorseSequence, critical_points, upward_endpoint

Fn = Callable[[np.ndarray], np.ndarray]


class NotAMinimumError(ValueError):
    pass


class RefineError(RuntimeError):
    """Sampling too coarse for the requested tolerance."""


# ---------------------------------------------------------------------------
# truncated power series


def taylor(fn: Fn, x0: float = 0.0, order: int = 12, radius: float = 0.25, m: int = 128) -> np.ndarray:
    """Taylor coefficients a_0..a_order of fn at x0 by a discrete Cauchy integral."""
    z = np.exp(2j * np.pi * np.arange(m) / m)
    vals = np.asarray(fn(x0 + radius * z), dtype=complex) * np.ones(m)
    c = np.fft.fft(vals) / m
    return (c[: order + 1] / radius ** np.arange(order + 1)).real


def _mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)[: len(a)]


def _sqrt(c: np.ndarray) -> np.ndarray:
    s = np.zeros_like(c)
    s[0] = math.sqrt(c[0])
    for m in range(1, len(c)):
        s[m] = (c[m] - np.dot(s[1:m], s[m - 1 : 0 : -1])) / (2 * s[0])
    return s


def _compose(u: np.ndarray, x: np.ndarray) -> np.ndarray:
    """u(x(y)) for a series x with x(0) = 0."""
    out = np.zeros_like(x)
    for coef in u[::-1]:
        out = _mul(out, x)
        out[0] += coef
    return out


def _revert(s: np.ndarray) -> np.ndarray:
    """Inverse series of s(x) = s_1 x + s_2 x^2 + ..."""
    y = np.zeros_like(s)
    y[1] = 1.0
    x = y / s[1]
    for _ in range(len(s)):
        x = x - (_compose(s, x) - y) / s[1]
    return x


def _deriv(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[:-1] = a[1:] * np.arange(1, len(a))
    return out


# ---------------------------------------------------------------------------
# Laplace method


@dataclass
class LaplaceProblem:
    phase: Fn
    amplitude: Fn
    order: int
    hbar: float
    domain: tuple[float, float] = (-3.0, 3.0)


@dataclass
class LaplaceResult:
    expansion: float
    quadrature: float
    error: float
    terms: list[float]


def _morse_chart_amplitude(phase: Fn, amplitude: Fn, order: int, x0: float = 0.0) -> tuple[np.ndarray, float, float]:
    K = 2 * order + 2
    ph = taylor(phase, x0, K + 2)
    scale = max(1.0, abs(ph[2]))
    if abs(ph[1]) > 1e-8 * scale:
        raise NotAMinimumError(f"phase has slope {ph[1]:.3g} at {x0}")
    if ph[2] <= 1e-12:
        raise NotAMinimumError(f"phase second derivative {2 * ph[2]:.3g} is not positive at {x0}")
    # x̃ = x·sqrt(2φ(x)/x²), then invert and pull back u·dx
    s = np.zeros(K + 1)
    s[1:] = _sqrt(2 * ph[2 : K + 2])
    x = _revert(s)
    u = taylor(amplitude, x0, K)
    g = _mul(_compose(u, x), _deriv(x))
    return g, ph[0], 2 * ph[2]


def laplace_expand(p: LaplaceProblem) -> LaplaceResult:
    """N-term expansion of ∫ e^{-φ/ℏ} u around the minimum at 0, and adaptive quadrature."""
    g, phi0, _ = _morse_chart_amplitude(p.phase, p.amplitude, p.order)
    hb = p.hbar
    pref = math.sqrt(2 * math.pi * hb) * math.exp(-phi0 / hb)
    terms = [pref * hb**k / (2**k * math.factorial(k)) * math.factorial(2 * k) * g[2 * k] for k in range(p.order)]
    expansion = float(sum(terms))
    a, b = p.domain
    integrand = lambda x: math.exp(-float(np.real(p.phase(x))) / hb) * float(np.real(p.amplitude(x)))
    pts = [0.0] if a < 0.0 < b else None
    val, _ = quad(integrand, a, b, points=pts, epsabs=0.0, epsrel=1e-13, limit=500)
    return LaplaceResult(expansion, val, expansion - val, terms)


def laplace_error_slope(phase: Fn, amplitude: Fn, order: int, hbars: Sequence[float], domain=(-3.0, 3.0)) -> float:
    """Log-log slope of |expansion - quadrature| over ℏ."""
    errs = [abs(laplace_expand(LaplaceProblem(phase, amplitude, order, h, domain)).error) for h in hbars]
    return float(np.polyfit(np.log(hbars), np.log(errs), 1)[0])


def fiber_laplace(phase: Fn, beta: Fn, v: float, hbar: float, domain: tuple[float, float]) -> dict:
    """Leading term √(2πℏ)·β(v)/√φ''(v)·e^{-φ(v)/ℏ} of the fiber integral, with quadrature."""
    ph = taylor(phase, v, 4)
    hess = 2 * ph[2]
    if abs(ph[1]) > 1e-8 * max(1.0, abs(hess)):
        raise NotAMinimumError(f"{v} is not critical for the fiber phase")
    if hess <= 1e-12:
        raise NotAMinimumError(f"degenerate fiber Hessian {hess:.3g} at {v}")
    b0 = float(np.real(beta(np.array([v], dtype=complex))[0])) if callable(beta) else float(beta)
    lead = math.sqrt(2 * math.pi * hbar) * b0 / math.sqrt(hess) * math.exp(-ph[0] / hbar)
    a, b = domain
    integrand = lambda x: math.exp(-float(np.real(phase(x))) / hbar) * float(np.real(beta(x)))
    val, _ = quad(integrand, a, b, points=[v] if a < v < b else None, epsabs=0.0, epsrel=1e-13, limit=500)
    return {"leading": lead, "quadrature": val, "hessian": hess, "error": lead - val}


# ---------------------------------------------------------------------------
# WKB transport along a flow line

_C4 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_B4 = np.array([3.0, -16.0, 36.0, -48.0, 25.0]) / 12.0  # backward, points i-4..i


def ddt(y: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order central differences, one-sided at the ends."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    out[2:-2] = (y[:-4] * _C4[0] + y[1:-3] * _C4[1] + y[3:-1] * _C4[3] + y[4:] * _C4[4]) / dt
    for i in (0, 1):
        out[i] = -np.dot(_B4, y[i : i + 5][::-1]) / dt
    for i in (-2, -1):
        j = len(y) + i
        out[j] = np.dot(_B4, y[j - 4 : j + 1]) / dt
    return out


def upwind(y: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order backward (upwind for flow towards larger t) differences."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    out[4:] = (_B4[0] * y[:-4] + _B4[1] * y[1:-3] + _B4[2] * y[2:-2] + _B4[3] * y[3:-1] + _B4[4] * y[4:]) / dt
    for i in range(4):
        out[i] = -np.dot(_B4, y[i : i + 5][::-1]) / dt
    return out


@dataclass
class FlowLineProblem:
    """Samples along a flow line t ↦ θ(t), uniform in t.

    psi_E defaults to psi_S(start) plus the arclength of f along the line;
    M defaults to -g_E'' with g_E = psi_E - f.
    """

    t: np.ndarray
    theta: np.ndarray
    f: np.ndarray
    psi_S: np.ndarray
    nu: np.ndarray
    psi_E: np.ndarray | None = None
    M: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        steps = np.diff(self.t)
        if len(self.t) < 16 or np.ptp(steps) > 1e-9 * abs(steps.mean()):
            raise ValueError("t must be a uniform grid with at least 16 points")
        for name in ("theta", "f", "psi_S", "nu"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.psi_E is None:
            self.psi_E = psi_E_from_flow(self.t, self.f, self.psi_S[0])
        self.psi_E = np.asarray(self.psi_E, dtype=float)
        if self.M is not None:
            self.M = np.asarray(self.M, dtype=float)
        else:
            g = self.g_E
            self.M = -self.d_theta(self.d_theta(g))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def speed(self) -> np.ndarray:
        return ddt(self.theta, self.dt)

    @property
    def g_E(self) -> np.ndarray:
        return self.psi_E - self.f

    @property
    def Psi(self) -> np.ndarray:
        return self.psi_E - self.psi_S

    def d_theta(self, y: np.ndarray) -> np.ndarray:
        return ddt(y, self.dt) / self.speed

    def laplacian(self, y: np.ndarray) -> np.ndarray:
        return -self.d_theta(self.d_theta(y))

    @classmethod
    def from_json(cls, path_or_dict) -> "FlowLineProblem":
        d = path_or_dict if isinstance(path_or_dict, dict) else json.loads(Path(path_or_dict).read_text())
        theta = d.get("theta", d["t"])
        return cls(np.asarray(d["t"]), np.asarray(theta), np.asarray(d["f"]), np.asarray(d["psi_S"]), np.asarray(d["nu"]), d.get("psi_E"), d.get("M"))


def psi_E_from_flow(t: np.ndarray, f: np.ndarray, start: float) -> np.ndarray:
    """ψ_E along a line without critical points: start value plus ∫|df|."""
    df = np.abs(ddt(f, float(t[1] - t[0])))
    return start + cumulative_simpson(df, x=t, initial=0.0)


def psi_E_gradient_defect(fp: FlowLineProblem) -> float:
    """max | |dψ_E/dθ| - |df/dθ| | relative to max |df/dθ|."""
    a = np.abs(fp.d_theta(fp.psi_E))
    b = np.abs(fp.d_theta(fp.f))
    return float(np.abs(a - b)[4:-4].max() / b.max())


def elementary_bump(hbar: float = 0.1, n: int = 16001, a: float = -0.5, b: float = 0.5, width: float = 0.15, span: float = 6.0) -> FlowLineProblem:
    """M = 0, Ψ = 0, unit speed, ν a smoothed indicator of [a, b]."""
    t = np.linspace(-span, span, n)
    nu = 0.5 * (np.tanh((t - a) / width) - np.tanh((t - b) / width))
    zero = np.zeros_like(t)
    return FlowLineProblem(t, t.copy(), zero, zero, nu, psi_E=zero, M=zero)


def elementary_bump_mu0(fp: FlowLineProblem, hbar: float, a: float = -0.5, b: float = 0.5, width: float = 0.15) -> np.ndarray:
    """Closed form (1/2ℏ)∫_{-∞}^t ν for the elementary bump."""

    def lc(x):
        return np.logaddexp(x, -x) - math.log(2.0)

    F = 0.5 * (width * (lc((fp.t - a) / width) - lc((fp.t - b) / width)) - (a - b))
    return F / (2 * hbar)


@dataclass
class TransportResult:
    mu: np.ndarray
    residual: float
    flags: list[str] = field(default_factory=list)


def _cumint(y: np.ndarray, dt: float) -> np.ndarray:
    return cumulative_simpson(y, dx=dt, initial=0.0)


def I_operator(fp: FlowLineProblem, phi: np.ndarray, tol: float = 1e-7) -> tuple[np.ndarray, list[str]]:
    """I(φ)(t) = ∫_{t0}^t e^{½∫_r^t M} φ(r) dr, so that (2∂_t - M) I(φ) = 2φ.

    The lower limit is the first sample; a flag is raised when φ is not
    negligible (1e-30 relative) there. Agreement with the half grid is
    required to ``tol``.
    """
    flags = []
    phi = np.asarray(phi, dtype=float)
    peak = np.abs(phi).max()
    if peak == 0:
        return np.zeros_like(phi), flags
    if abs(phi[0]) > 1e-30 * peak:
        flags.append("integrand not negligible at the truncated lower limit")

    def run(step, M, ph):
        E = _cumint(M, step)
        return np.exp(E / 2) * _cumint(np.exp(-E / 2) * ph, step)

    full = run(fp.dt, fp.M, phi)
    sl = slice(0, None, 2)
    half = run(2 * fp.dt, fp.M[sl], phi[sl])
    err = np.abs(full[sl] - half).max() / max(np.abs(full).max(), 1e-300)
    if err > tol:
        raise RefineError(f"I(φ) changes by {err:.2e} under grid halving; refine the flow-line samples")
    return full, flags


def transport_operator(fp: FlowLineProblem, mu: np.ndarray) -> np.ndarray:
    """𝒯μ = 2∂_tμ - Mμ, derivative by upwind differences."""
    return 2 * upwind(mu, fp.dt) - fp.M * mu


def _rel_resid(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.abs(b).max()
    if scale == 0:
        return float(np.abs(a).max())
    return float(np.abs(a - b).max() / scale)


def transport_leading(fp: FlowLineProblem, hbar: float) -> TransportResult:
    """μ₀ = (1/2ℏ) I(e^{Ψ/ℏ} ν), with the residual of ℏ𝒯μ₀ = e^{Ψ/ℏ}ν."""
    src = np.exp(fp.Psi / hbar) * fp.nu
    I, flags = I_operator(fp, src)
    mu = I / (2 * hbar)
    res = _rel_resid(hbar * transport_operator(fp, mu), src)
    return TransportResult(mu, res, flags)


def transport_iterate(fp: FlowLineProblem, mu: np.ndarray, hbar: float, smooth_tol: float = 1e-4) -> TransportResult:
    """μ_{l+1} = -(ℏ/2) I(Δμ_l), with the residual of 𝒯μ_{l+1} = -ℏΔμ_l."""
    mu = np.asarray(mu, dtype=float)
    lap = fp.laplacian(mu)
    if np.abs(lap).max() == 0:
        return TransportResult(np.zeros_like(mu), 0.0)
    coarse = FlowLineProblem(fp.t[::2], fp.theta[::2], fp.f[::2], fp.psi_S[::2], fp.nu[::2], fp.psi_E[::2], fp.M[::2])
    lap2 = coarse.laplacian(mu[::2])
    inner = slice(8, -8)
    dev = np.abs(lap[::2][inner] - lap2[inner]).max() / np.abs(lap).max()
    if dev > smooth_tol:
        raise RefineError(f"Δμ changes by {dev:.2e} under grid halving; samples are not smooth enough")
    I, flags = I_operator(fp, lap)
    nxt = -0.5 * hbar * I
    res = _rel_resid(transport_operator(fp, nxt), -hbar * lap)
    return TransportResult(nxt, res, flags)


def transport_order_slope(make: Callable[[float], FlowLineProblem], hbars: Sequence[float]) -> dict:
    """Log-log slope of ‖μ₁‖/‖μ₀‖ against ℏ."""
    ratios, resid = [], []
    for hb in hbars:
        fp = make(hb)
        r0 = transport_leading(fp, hb)
        r1 = transport_iterate(fp, r0.mu, hb)
        ratios.append(np.linalg.norm(r1.mu) / np.linalg.norm(r0.mu))
        resid.append(max(r0.residual, r1.residual))
    slope = float(np.polyfit(np.log(hbars), np.log(ratios), 1)[0])
    return {"hbar": list(hbars), "ratio": [float(r) for r in ratios], "slope": slope, "max_residual": float(max(resid))}


# ---------------------------------------------------------------------------
# 1/ℏ amplification across an internal edge, measured on the discrete pipeline


def homotopy_amplification_ratio(seq: MorseSequence, q: Sequence, hbar: float, n: int = 1024, edge: tuple[int, int] = (1, 3)) -> dict:
    """ℏ·(gauge value of H_e w downstream) / (fiber integral of w at its source).

    w is the wedge feeding the internal edge e of a k=3 tree: φ_23 ∧ φ_12
    for e = 13, φ_12 ∧ φ_01 for e = 02. The downstream point is halfway
    along the upward flow of f_e from the source; the fiber integral is
    oriented along that flow. Leading order predicts 1.
    """
    from .ainfty_products import wedge_values
    from .spectral_subspace import MpRetract, mp_precision_bits

    if edge == (1, 3):
        labels = [(2, 3), (1, 2)]
        qs = [q[2], q[1]]
    elif edge == (0, 2):
        labels = [(1, 2), (0, 1)]
        qs = [q[1], q[0]]
    else:
        raise ValueError("edge must be (1, 3) or (0, 2)")
    f_e = seq.diff(*edge)
    pairs = labels + [edge]
    osc = max(seq.diff(*p).oscillation() for p in pairs)
    with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(hbar, osc)):
        th = np.array([2 * gmpy2.const_pi() / n * i for i in range(n)], dtype=object)
        F = {i: seq.functions[i].mp_values(th) for p in pairs for i in p}
        R = {p: MpRetract(seq.diff(*p), hbar, n, f_values=F[p[1]] - F[p[0]]) for p in pairs}
        a, b = R[labels[0]].phi(qs[0]), R[labels[1]].phi(qs[1])
        w = wedge_values(a, qs[0].index, b, qs[1].index, R[labels[0]], R[labels[1]])
        if qs[0].index + qs[1].index != 1:
            raise ValueError("the inputs do not produce a 1-form on the edge")
        cx = R[edge].cx
        u = R[edge].homotopy(w, 1)
        hb = cx.hbar
        dens = np.array([gmpy2.exp(cx.fe[i] / hb) * w[i] for i in range(n)], dtype=object)
        h = float(cx.h)
        i1 = int(np.argmax([float(gmpy2.log(abs(x))) if x != 0 else -math.inf for x in dens]))
        v1 = (i1 + 0.5) * h
        crits = critical_points(f_e)
        end, direction = upward_endpoint(f_e, crits, v1)
        length = ((end - v1) * direction) % (2 * math.pi)
        v2 = (v1 + direction * length / 2) % (2 * math.pi)
        i2 = int(round(v2 / h)) % n
        half = max(1, int(length / 2 / h))
        window = [(i1 + j) % n for j in range(-half, half + 1)]
        fiber = h * sum(dens[i] for i in window) * direction
        numer = hb * gmpy2.exp(cx.fv[i2] / hb) * u[i2]
        ratio = float(numer / fiber)
    return {"edge": f"{edge[0]}{edge[1]}", "hbar": hbar, "source": v1, "target": i2 * h, "direction": direction, "ratio": ratio}
