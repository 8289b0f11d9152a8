import math
import warnings

import gmpy2
import numpy as np
import pytest

from mwl.discrete_derham import CircleGrid, WittenData, witten_laplacian
from mwl.morse_circle import PeriodicFunction, critical_points
from mwl.spectral_subspace import (
    MpRetract, RegimeError, closed_form_constant, eigenform_decay_slope, expected_dims, green, hbar_floor, homotopy, identity_residuals,
    mp_precision_bits, phi_map_dense, regime_check, small_spectrum,
)

COS2 = PeriodicFunction(0, (0.1, 1.0))


def dense(f, hb, n=256, scheme="dec"):
    w = WittenData(CircleGrid(n, scheme), f, hb)
    e0, e1 = expected_dims(f)
    L0, L1 = witten_laplacian(w, 0), witten_laplacian(w, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        S0, S1 = small_spectrum(L0, hb, e0), small_spectrum(L1, hb, e1)
    return w, L0, L1, S0, S1


@pytest.mark.parametrize("scheme,n", [("dec", 256), ("spectral", 127)])
def test_dense_identities(scheme, n):
    w, L0, L1, S0, S1 = dense(COS2, 0.15, n, scheme)
    hom = homotopy(w, S0, S1, L0, L1)
    for L, S, G in ((L0, S0, hom.G0), (L1, S1, hom.G1)):
        r = identity_residuals(L, S, G)
        assert max(r.values()) < 1e-8
        assert np.abs(G.matrix @ S.vectors).max() < 1e-8
    assert hom.residual < 1e-8
    assert np.all(S0.eigenvalues < 0.15**1.5) and S0.dim == 2 and S1.dim == 2


def test_small_eigenvalues_tunnel():
    # the non-kernel small eigenvalue shrinks like e^{-2·barrier/ℏ}
    lams = []
    for hb in (0.25, 0.2):
        _, L0, _, S0, _ = dense(COS2, hb)
        lams.append(S0.eigenvalues[1])
    assert lams[1] < lams[0]


def test_count_mismatch_raises():
    w = WittenData(CircleGrid(256), COS2, 0.15)
    with pytest.raises(RegimeError):
        small_spectrum(witten_laplacian(w, 0), 0.15, 3)


def test_weak_gap_flagged():
    w = WittenData(CircleGrid(256), COS2, 0.5)
    with pytest.warns(UserWarning):
        S = small_spectrum(witten_laplacian(w, 0), 0.5, None, gap_warn=1e6)
    assert S.flags


def test_regime_floor():
    f = PeriodicFunction(0, (1.0,))
    floor = hbar_floor(f, 256)
    assert floor == pytest.approx(2 * math.pi / 256 / 0.5, rel=1e-6)
    with pytest.raises(RegimeError):
        regime_check(f, 0.9 * floor, 256)
    rep = regime_check(COS2, 0.15, 256)
    assert [d["dim"] for d in rep["degrees"]] == [2, 2]


def test_dense_phi_nodal():
    w, L0, L1, S0, S1 = dense(COS2, 0.2)
    crits = critical_points(COS2)
    B = phi_map_dense(S0, crits, w)
    for q in B.criticals:
        i = int(round(q.theta / w.grid.h)) % w.grid.n
        gauge = math.exp((w.samples[i] - q.value) / 0.2)
        assert gauge * B[q][i] == pytest.approx(1.0, abs=0.05)


@pytest.fixture(scope="module")
def mp_retract():
    hb, n = 0.1, 256
    with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(hb, COS2.oscillation())):
        yield MpRetract(COS2, hb, n)


def _rand(n, seed):
    r = np.random.default_rng(seed)
    return np.array([gmpy2.mpfr(float(x)) for x in r.standard_normal(n)], dtype=object)


def test_mp_homotopy_identity(mp_retract):
    R = mp_retract
    with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(R.hbar, COS2.oscillation())):
        x1 = _rand(R.n, 1)
        lhs = R.d(R.homotopy(x1, 1))
        rhs = x1 - R.project(x1, 1)
        assert float(R.cx.norm(lhs - rhs) / R.cx.norm(x1)) < 1e-20
        u = _rand(R.n, 2)
        lhs = R.homotopy(R.d(u), 1)
        rhs = u - R.project(u, 0)
        assert float(R.cx.norm(lhs - rhs) / R.cx.norm(u)) < 1e-20
        p = R.project(u, 0)
        assert float(R.cx.norm(R.project(p, 0) - p) / R.cx.norm(p)) < 1e-25


def test_mp_green_kills_small(mp_retract):
    R = mp_retract
    with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(R.hbar, COS2.oscillation())):
        for deg in (0, 1):
            for v in R.on[deg]:
                assert float(R.cx.norm(R.green(v, deg))) < 1e-20
            lam = R.small_eigenvalues(deg)
            assert all(float(x) < R.hbar**1.5 for x in lam)


def test_mp_matches_dense_small_eigs():
    hb, n = 0.2, 256
    _, _, _, S0, _ = dense(COS2, hb, n)
    with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(hb, COS2.oscillation())):
        R = MpRetract(COS2, hb, n)
        mp = sorted(float(x) for x in R.small_eigenvalues(0))
    assert mp[1] == pytest.approx(S0.eigenvalues[1], rel=1e-6)


def test_eigenform_slope_quick(mp_retract):
    R = mp_retract
    q = next(c for c in R.crits if c.index == 0)
    xs = [q.theta + s for s in (0.3, 0.5, 0.7, 0.9)]
    with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(R.hbar, COS2.oscillation())):
        slope, rho, vals = eigenform_decay_slope(R, q, xs)
    assert slope == pytest.approx(1.0, abs=0.1)


def test_closed_form_constant_ratio():
    # ‖φ_q‖ over the closed-form constant tends to 1 at rate O(ℏ)
    devs = []
    for hb in (0.1, 0.05):
        with gmpy2.context(gmpy2.get_context(), precision=mp_precision_bits(hb, COS2.oscillation())):
            R = MpRetract(COS2, hb, 1024)
            devs.append(max(abs(float(gmpy2.sqrt(R.norm2(R.phi(q)))) / closed_form_constant(q, hb) - 1) for q in R.crits))
    assert devs[0] < 0.01
    assert devs[1] < 0.6 * devs[0]
