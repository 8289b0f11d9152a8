"""ℏ-sweeps of product pairings and the log-linear fit against Morse data.

The model fitted is log|v(ℏ)| = -A/ℏ + p·log ℏ + c; the expected values
are A = action(q), p = 2 - k and ±e^c = the signed count of rigid
gradient trees.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import gmpy2
import numpy as np

from .ainfty_products import product_value
from .morse_circle import CriticalPoint, MorseSequence, action, degree_balanced, morse_product, tree_action
from .spectral_subspace import MpRetract, RegimeError, mp_precision_bits, regime_check
from .tree_combinatorics import enumerate_topologies

DEFAULT_HBARS = {1: [0.12, 0.106, 0.092, 0.078, 0.064, 0.05], 2: [0.12, 0.10, 0.08, 0.07, 0.06, 0.05], 3: [0.15, 0.13, 0.11, 0.09, 0.08, 0.07]}
COND_MAX = 1e6
MIN_POINTS = 5


class FitError(ValueError):
    pass


@dataclass
class SweepResult:
    k: int
    q: tuple[CriticalPoint, ...]
    hbars: list[float]
    log_abs: list[float]
    signs: list[int]
    per_tree: dict[str, list[tuple[float, int]]]
    regime: list[dict] = field(default_factory=list)
    dropped: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    trivial: bool = False

    def csv_rows(self) -> list[dict]:
        rows = []
        for i, hb in enumerate(self.hbars):
            rows.append({"k": self.k, "hbar": hb, "log_abs_pairing": self.log_abs[i], "sign": self.signs[i], "topology_id": ""})
            for tid, vals in self.per_tree.items():
                la, sg = vals[i]
                rows.append({"k": self.k, "hbar": hb, "log_abs_pairing": la, "sign": sg, "topology_id": tid})
        return rows

    def write_csv(self, path: str | Path, meta: dict | None = None) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            for key, val in sorted((meta or {}).items()):
                fh.write(f"# {key}={val}\n")
            w = csv.DictWriter(fh, fieldnames=["k", "hbar", "log_abs_pairing", "sign", "topology_id"], lineterminator="\n")
            w.writeheader()
            for r in self.csv_rows():
                w.writerow({**r, "log_abs_pairing": repr(float(r["log_abs_pairing"]))})
        return path

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "q": [c.theta for c in self.q],
            "hbar": list(self.hbars),
            "log_abs_pairing": [_jf(x) for x in self.log_abs],
            "sign": list(self.signs),
            "per_tree": {tid: [[_jf(a), s] for a, s in v] for tid, v in self.per_tree.items()},
            "dropped": self.dropped,
            "flags": self.flags,
            "trivial": self.trivial,
        }


def _jf(x: float):
    return x if math.isfinite(x) else None


def _one_hbar(seq: MorseSequence, q: tuple, k: int, hbar: float, n: int, check_regime: bool) -> dict:
    pairs = [(i, j) for i in range(k + 1) for j in range(i + 1, k + 1)]
    reports = []
    if check_regime:
        try:
            for i, j in pairs:
                rep = regime_check(seq.diff(i, j), hbar, n)
                rep["label"] = f"{i}{j}"
                reports.append(rep)
        except RegimeError as exc:
            return {"hbar": hbar, "error": str(exc)}
    osc = max(seq.diff(i, j).oscillation() for i, j in pairs)
    with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(hbar, osc)):
        th = np.array([2 * gmpy2.const_pi() / n * i for i in range(n)], dtype=object)
        F = [f.mp_values(th) for f in seq.functions[: k + 1]]
        R = {(i, j): MpRetract(seq.diff(i, j), hbar, n, f_values=F[j] - F[i]) for i, j in pairs}
        pv = product_value(k, q, R, hbar)
        js = pv.to_json()
    return {"hbar": hbar, "value": js, "regime": reports}


def _workers(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("MWL_THREADS", "1") or 1)
    return max(1, threads)


def hbar_sweep(seq: MorseSequence, q: Sequence[CriticalPoint], k: int, hbars: Sequence[float], n: int = 1024, threads: int | None = None, check_regime: bool = True) -> SweepResult:
    """Evaluate the pairing of m_k(φ(q_{k-1,k}), ..., φ(q_01)) with φ(q_0k) at each ℏ.

    An ℏ that fails the regime check is dropped and recorded in ``dropped``.
    """
    q = tuple(q)
    if len(q) != k + 1:
        raise ValueError(f"k={k} needs {k + 1} critical points, got {len(q)}")
    hbars = sorted({float(h) for h in hbars}, reverse=True)
    topo = [t.topology_id for t in enumerate_topologies(k)]
    if not degree_balanced(q):
        return SweepResult(k, q, hbars, [-math.inf] * len(hbars), [0] * len(hbars), {t: [(-math.inf, 0)] * len(hbars) for t in topo}, flags=["degree condition fails: product vanishes identically"], trivial=True)
    nw = _workers(threads)
    args = [(seq, q, k, hb, n, check_regime) for hb in hbars]
    if nw > 1 and len(hbars) > 1:
        with ProcessPoolExecutor(max_workers=min(nw, len(hbars))) as ex:
            results = list(ex.map(_one_hbar, *zip(*args)))
    else:
        results = [_one_hbar(*a) for a in args]
    out = SweepResult(k, q, [], [], [], {t: [] for t in topo})
    for r in results:  # already in decreasing ℏ order
        if "error" in r:
            out.dropped.append({"hbar": r["hbar"], "reason": r["error"]})
            out.flags.append(f"ℏ={r['hbar']} dropped: regime")
            continue
        v = r["value"]
        out.hbars.append(r["hbar"])
        out.log_abs.append(v["pairing_log_abs"])
        out.signs.append(v["pairing_sign"])
        for t in v["per_tree"]:
            out.per_tree[t["topology_id"]].append((t["pairing_log_abs"], t["sign"]))
        out.regime.extend(r["regime"])
        for rep in r["regime"]:
            out.flags += [f"ℏ={r['hbar']} {rep['label']}: {fl}" for fl in rep["flags"]]
    if len(set(s for s in out.signs if s != 0)) > 1:
        out.flags.append("pairing sign changes across the sweep")
    return out


@dataclass
class Fit:
    A: float
    A_stderr: float
    p: float
    p_stderr: float
    c: float
    coeff: float
    max_rel_residual: float
    cond: float
    n_points: int


def fit_log_model(hbars: Sequence[float], logs: Sequence[float]) -> Fit:
    """Least squares log|v| = -A/ℏ + p log ℏ + c with standard errors."""
    hb = np.asarray(hbars, dtype=float)
    y = np.asarray(logs, dtype=float)
    ok = np.isfinite(y)
    hb, y = hb[ok], y[ok]
    if len(hb) < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} finite points, got {len(hb)}")
    X = np.column_stack([-1.0 / hb, np.log(hb), np.ones_like(hb)])
    cond = float(np.linalg.cond(X))
    if cond > COND_MAX:
        raise FitError(f"design matrix condition number {cond:.3g} > {COND_MAX:g}; widen the ℏ range")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(y) - 3
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(X.T @ X)
    rel = float(np.max(np.abs(resid) / np.maximum(np.abs(y), 1e-300)))
    A, p, c = (float(v) for v in coef)
    return Fit(A, math.sqrt(cov[0, 0]), p, math.sqrt(cov[1, 1]), c, math.exp(c), rel, cond, len(y))


@dataclass
class FitReport:
    k: int
    fit: Fit
    A_ref: float
    p_ref: int
    count_ref: int
    sweep_sign: int
    tol_A: float
    tol_p: float
    verdict: dict
    per_tree: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.verdict.get("pass"))

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def fit_asymptotics(s: SweepResult, seq: MorseSequence, tol_A: float = 0.05, tol_p: float = 0.2) -> FitReport:
    """Fit the sweep and compare with action(), 2-k and the signed tree count."""
    if s.trivial:
        raise FitError("sweep is trivial (degree condition fails); nothing to fit")
    fit = fit_log_model(s.hbars, s.log_abs)
    A_ref = action(seq, s.q)
    count, per = morse_product(seq, s.q)
    p_ref = 2 - s.k
    signs = {x for x in s.signs if x != 0}
    sweep_sign = signs.pop() if len(signs) == 1 else 0
    flags = list(s.flags)
    rel_A = abs(fit.A - A_ref) / abs(A_ref) if A_ref else math.inf
    checks = {
        "A": rel_A < tol_A,
        "power": abs(fit.p - p_ref) < tol_p,
        "count": int(round(fit.coeff)) == abs(count),
        "sign": count != 0 and sweep_sign == (1 if count > 0 else -1),
    }
    precise = fit.A_stderr < tol_A * abs(A_ref) and fit.p_stderr < tol_p
    verdict = {**checks, "rel_err_A": rel_A, "stderr_ok": precise, "action_lower_bound_ok": fit.A >= A_ref - 3 * fit.A_stderr}
    verdict["pass"] = precise and all(checks.values()) if precise else None
    if not precise:
        flags.append("standard errors above tolerance; no verdict issued")
    report = FitReport(s.k, fit, A_ref, p_ref, count, sweep_sign, tol_A, tol_p, verdict, flags=flags)
    report.per_tree = tree_resolved(s, seq, per)
    return report


def tree_resolved(s: SweepResult, seq: MorseSequence, per_count: dict | None = None) -> list[dict]:
    """Separate fits of each tree's pairing against that tree's action.

    For a topology with no rigid tree the fitted exponent should exceed
    action(q) by at least three standard errors.
    """
    if s.k < 2:
        return []
    if per_count is None:
        per_count = morse_product(seq, s.q)[1]
    A = action(seq, s.q)
    out = []
    for t in enumerate_topologies(s.k):
        logs = [la for la, _ in s.per_tree.get(t.topology_id, [])]
        entry = {"topology_id": t.topology_id, "count": int(per_count.get(t.topology_id, 0))}
        try:
            A_tree = float(tree_action(seq, s.q, t)[0])
        except Exception as exc:  # no admissible configuration at all
            A_tree = math.inf
            entry["tree_action_error"] = str(exc)
        entry["A_tree"] = A_tree
        try:
            f = fit_log_model(s.hbars, logs)
        except FitError as exc:
            entry["fit_error"] = str(exc)
            out.append(entry)
            continue
        entry.update({"A_est": f.A, "A_stderr": f.A_stderr, "p_est": f.p, "coeff": f.coeff})
        entry["matches_tree_action"] = math.isfinite(A_tree) and abs(f.A - A_tree) / A_tree < 0.05
        if entry["count"] == 0:
            entry["faster_than_A"] = f.A - A >= 3 * f.A_stderr and f.A > A
        out.append(entry)
    return out


def verify_theorem(seq: MorseSequence, q: Sequence[CriticalPoint], k: int, hbars: Sequence[float] | None = None, n: int = 1024, tol_A: float = 0.05, tol_p: float = 0.2, threads: int | None = None) -> tuple[SweepResult, FitReport | None, dict]:
    """Sweep, fit and verdict. Refuses (verdict pass=None) with fewer than 5 usable points."""
    hbars = hbars or DEFAULT_HBARS.get(k, DEFAULT_HBARS[3])
    s = hbar_sweep(seq, q, k, hbars, n=n, threads=threads)
    try:
        rep = fit_asymptotics(s, seq, tol_A, tol_p)
    except FitError as exc:
        return s, None, {"pass": None, "reason": str(exc), "flags": s.flags}
    return s, rep, {"pass": rep.verdict["pass"], **rep.verdict}
