import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mwl.asymptotic_analysis import FitError, SweepResult, fit_log_model, hbar_sweep
from mwl.morse_circle import PeriodicFunction, MorseSequence

HB = [0.12, 0.106, 0.092, 0.078, 0.064, 0.05]


def test_synthetic_recovery():
    logs = [math.log(3.0) - 2.0 / h - math.log(h) for h in HB]
    f = fit_log_model(HB, logs)
    assert f.A == pytest.approx(2.0, abs=1e-6)
    assert f.p == pytest.approx(-1.0, abs=1e-6)
    assert f.coeff == pytest.approx(3.0, rel=1e-6)
    assert f.A_stderr < 1e-6


@given(st.floats(0.2, 5.0), st.floats(-2.0, 2.0), st.floats(-3.0, 3.0))
@settings(max_examples=50, deadline=None)
def test_recovery_lattice(A, p, c):
    logs = [c - A / h + p * math.log(h) for h in HB]
    f = fit_log_model(HB, logs)
    assert f.A == pytest.approx(A, abs=1e-6)
    assert f.p == pytest.approx(p, abs=1e-6)
    assert f.c == pytest.approx(c, abs=1e-5)


def test_noise_gives_stderr():
    rng = np.random.default_rng(0)
    logs = [-2.0 / h + 0.01 * rng.standard_normal() for h in HB]
    f = fit_log_model(HB, logs)
    assert f.A_stderr > 0
    assert abs(f.A - 2.0) < 5 * f.A_stderr + 1e-3


def test_too_few_points():
    with pytest.raises(FitError):
        fit_log_model(HB[:4], [-1.0 / h for h in HB[:4]])


def test_non_finite_points_dropped():
    logs = [-1.0 / h for h in HB]
    logs[2] = -math.inf
    with pytest.raises(FitError):
        fit_log_model(HB[:5], logs[:5])


def test_ill_conditioned():
    hb = [0.1, 0.1 + 1e-7, 0.1 + 2e-7, 0.1 + 3e-7, 0.1 + 4e-7]
    with pytest.raises(FitError, match="condition"):
        fit_log_model(hb, [-1.0 / h for h in hb])


def test_degree_violation_trivial(triple):
    seq, q = triple
    bad = (seq.crit(0, 1, {"rank": 0, "index": 1}),) + q[1:]
    s = hbar_sweep(seq, bad, 2, HB, n=256, threads=1)
    assert s.trivial
    assert all(la == -math.inf for la in s.log_abs)


def test_wrong_length_q(triple):
    seq, q = triple
    with pytest.raises(ValueError):
        hbar_sweep(seq, q[:2], 2, HB)


def test_csv_layout(tmp_path, triple):
    seq, q = triple
    s = SweepResult(2, q, [0.1, 0.05], [-3.0, -6.5], [1, 1], {"(01,12)": [(-3.0, 1), (-6.5, 1)]})
    p = s.write_csv(tmp_path / "s.csv", {"config_hash": "abc", "tool_version": "x"})
    lines = p.read_text().splitlines()
    assert lines[:2] == ["# config_hash=abc", "# tool_version=x"]
    rows = list(csv.DictReader(l for l in lines if not l.startswith("#")))
    assert list(rows[0]) == ["k", "hbar", "log_abs_pairing", "sign", "topology_id"]
    assert len(rows) == 4
    assert float(rows[1]["log_abs_pairing"]) == -3.0 and rows[1]["topology_id"] == "(01,12)"


def test_small_k1_sweep():
    seq = MorseSequence([PeriodicFunction(), PeriodicFunction(0, (0.0, 1.0))])
    q = (seq.crit(0, 1, {"rank": 0, "index": 0}), seq.crit(0, 1, {"rank": 0, "index": 1}))
    s = hbar_sweep(seq, q, 1, [0.3, 0.27, 0.24, 0.21, 0.18], n=256, threads=1)
    assert not s.dropped
    f = fit_log_model(s.hbars, s.log_abs)
    assert f.A == pytest.approx(2.0, rel=0.05)
