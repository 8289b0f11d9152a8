import dataclasses
import warnings

import numpy as np
import pytest

from mwl.ainfty_products import (
    ConfigurationError, a_infinity_residual, bar_products, m1, m2, mk_total, mk_tree, product_value, random_toy_retracts,
    retract_from_dense,
)
from mwl.discrete_derham import CircleGrid, WittenData, witten_laplacian
from mwl.morse_circle import PeriodicFunction
from mwl.spectral_subspace import expected_dims, homotopy, small_spectrum
from mwl.tree_combinatorics import enumerate_topologies

FS = [
    PeriodicFunction(),
    PeriodicFunction(0, (1.0,), (0.3,)),
    PeriodicFunction(0, (0.2, 0.5), (-0.9, 0.1)),
    PeriodicFunction(0, (-0.6,), (1.1,)),
    PeriodicFunction(0, (0.4, 0.3), (0.2, -0.6)),
]


def dense_retracts(fs, n=64, hb=0.25):
    g = CircleGrid(n)
    out, worst = {}, 0.0
    for i in range(len(fs)):
        for j in range(i + 1, len(fs)):
            f = fs[j] - fs[i]
            w = WittenData(g, f, hb)
            L0, L1 = witten_laplacian(w, 0), witten_laplacian(w, 1)
            e0, e1 = expected_dims(f)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                S0, S1 = small_spectrum(L0, hb, e0), small_spectrum(L1, hb, e1)
            hom = homotopy(w, S0, S1, L0, L1)
            R = retract_from_dense((i, j), w, S0, S1, hom)
            R.hbar = hb
            out[(i, j)] = R
            worst = max(worst, R.homotopy_residual())
    return out, worst


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_toy_relations(seed):
    R = random_toy_retracts(objects=5, n=3, seed=seed)
    assert max(r.homotopy_residual() for r in R.values()) < 1e-12
    res = a_infinity_residual(R, 4)
    assert max(res.values()) < 1e-10


def test_toy_has_nonzero_b1_and_higher_products():
    R = random_toy_retracts(objects=4, n=3, seed=0)
    b = bar_products(R)
    r01 = R[(0, 1)]
    vals = [np.abs(b((((0, 1), i),))).max() for i in range(r01.P.shape[0])]
    assert max(vals) > 1e-3
    b3 = [np.abs(b((((2, 3), i), ((1, 2), j), ((0, 1), l)))).max()
          for i in range(R[(2, 3)].P.shape[0]) for j in range(R[(1, 2)].P.shape[0]) for l in range(r01.P.shape[0])]
    assert max(b3) > 1e-3


def test_wrong_homotopy_sign_detected():
    R = random_toy_retracts(objects=5, n=3, seed=0)
    bad = {lab: dataclasses.replace(r, H=-r.H) for lab, r in R.items()}
    res = a_infinity_residual(bad, 4)
    assert res[1] < 1e-10  # b1² = 0 does not see H
    assert max(res[3], res[4]) > 1e-6


@pytest.mark.slow
def test_spectral_retract_relations():
    R, hres = dense_retracts(FS)
    res = a_infinity_residual(R, 4)
    assert max(res.values()) < 100 * hres


def test_no_homotopy_kills_higher_trees():
    R = random_toy_retracts(objects=4, n=3, seed=3)
    rng = np.random.default_rng(0)
    inputs = []
    for i in range(3):
        inputs.append((rng.standard_normal(3), 0 if i else 1))
    for t in enumerate_topologies(3):
        v, deg = mk_tree(t, inputs, _vector_view(R), use_homotopy=False)
        assert v is None or np.allclose(v, 0)


class _View:
    """Adapter exposing the Retract protocol on degree-split vectors of a MatrixRetract."""

    def __init__(self, r):
        self.r, self.n = r, r.n
        self.half_minus, self.half_plus, self.hbar = r.half_minus, r.half_plus, 1.0

    def _full(self, x, deg):
        out = np.zeros(2 * self.n)
        out[deg * self.n:(deg + 1) * self.n] = x
        return out

    def project(self, x, deg):
        v = self.r.I @ (self.r.P @ self._full(x, deg))
        return v[deg * self.n:(deg + 1) * self.n]

    def homotopy(self, x, deg):
        if deg == 0:
            return 0 * x
        return (self.r.H @ self._full(x, deg))[(deg - 1) * self.n:deg * self.n]

    def d(self, x):
        return (self.r.D @ self._full(x, 0))[self.n:]


def _vector_view(R):
    return {lab: _View(r) for lab, r in R.items()}


def test_mk_total_is_sum_of_trees():
    R = _vector_view(random_toy_retracts(objects=4, n=3, seed=5))
    rng = np.random.default_rng(1)
    inputs = [(rng.standard_normal(3), 1), (rng.standard_normal(3), 0), (rng.standard_normal(3), 0)]
    total, deg, per = mk_total(3, inputs, R)
    assert deg == 0
    s = sum(v for v in per.values() if v is not None)
    assert np.allclose(total, s)


def test_m2_direct():
    toy = random_toy_retracts(objects=3, n=3, seed=7)
    R = _vector_view(toy)
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    v, deg = m2(R, b, 0, a, 1)
    # b ∈ Ω_12 in degree 0 times a ∈ Ω_01 in degree 1, projected with the full matrices
    w = b * R[(1, 2)].half_minus * a
    full = np.zeros(6)
    full[3:] = w
    expect = (toy[(0, 2)].I @ toy[(0, 2)].P @ full)[3:]
    assert deg == 1 and np.allclose(v, expect)
    assert m2(R, b, 1, a, 1) == (None, 2)


def test_m1_is_projected_d():
    toy = random_toy_retracts(objects=2, n=3, seed=4)
    R = _vector_view(toy)[(0, 1)]
    x = np.random.default_rng(0).standard_normal(3)
    v, deg = m1(R, x, 0)
    assert deg == 1 and np.allclose(v, R.project(R.d(x), 1))
    assert m1(R, x, 1) == (None, 2)


def test_missing_and_mixed_retracts():
    R = _vector_view(random_toy_retracts(objects=3, n=3, seed=0))
    with pytest.raises(ConfigurationError):
        m2({(0, 1): R[(0, 1)], (1, 2): R[(1, 2)]}, np.ones(3), 0, np.ones(3), 0)
    R[(0, 2)].hbar = 0.5
    with pytest.raises(ConfigurationError):
        m2(R, np.ones(3), 0, np.ones(3), 0)


def test_product_value_degree_rule(triple):
    # degree-unbalanced inputs give a zero pairing without touching the top retract
    from mwl.asymptotic_analysis import hbar_sweep

    seq, q = triple
    bad = (seq.crit(0, 1, {"rank": 0, "index": 1}),) + q[1:]
    s = hbar_sweep(seq, bad, 2, [0.1, 0.09, 0.08, 0.07, 0.06], n=256, threads=1)
    assert s.trivial
