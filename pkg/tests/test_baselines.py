import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import twfe_normal_equations
from panel_lift.baselines import mc_nnm, ols_twfe, rsc
from panel_lift.datagen import PatternSpec, gen_lowrank_gamma, gen_noise, gen_pattern
from panel_lift.errors import (
    Collinear,
    EmptyControlCol,
    EmptyControlRow,
    InputError,
    NoControls,
    PatternUnsupported,
)


def fixed_effects(n1, n2, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n1)[:, None] + rng.standard_normal(n2)[None, :]


def block(n1, n2, rows, start):
    z = np.zeros((n1, n2))
    z[rows, start:] = 1.0
    return z


# ------------------------------------------------------------ OLS


def test_ols_zero_effect():
    z = block(5, 6, [0, 1], 3)
    assert ols_twfe(fixed_effects(5, 6, 0), z).tau == pytest.approx(0.0, abs=1e-12)


def test_ols_exact_effect():
    z = block(5, 6, [0, 1], 3)
    res = ols_twfe(fixed_effects(5, 6, 1) + 2.0 * z, z)
    assert res.tau == pytest.approx(2.0, abs=1e-12)
    assert res.diagnostics["objective"] == pytest.approx(0.0, abs=1e-20)


def test_ols_matches_design_matrix_oracle():
    rng = np.random.default_rng(6)
    o = rng.standard_normal((6, 6))
    z = (rng.random((6, 6)) < 0.4).astype(float)
    z[0, 0] = 1.0
    assert ols_twfe(o, z).tau == pytest.approx(twfe_normal_equations(o, z), abs=1e-8)


def test_ols_collinear():
    z = np.zeros((4, 4))
    z[1, :] = 1.0
    with pytest.raises(Collinear):
        ols_twfe(np.ones((4, 4)), z)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_ols_objective_and_shift(seed, shift):
    rng = np.random.default_rng(seed)
    o = rng.standard_normal((5, 7))
    z = (rng.random((5, 7)) < 0.5).astype(float)
    z[0, 0], z[0, 1], z[1, 0] = 1.0, 0.0, 0.0
    res = ols_twfe(o, z)
    assert res.diagnostics["objective"] <= np.sum(o * o) + 1e-9
    assert ols_twfe(o + shift * z, z).tau == pytest.approx(res.tau + shift, abs=1e-9)


def test_ols_rejects_non_binary():
    with pytest.raises(InputError):
        ols_twfe(np.ones((3, 3)), np.full((3, 3), 0.5))


# ------------------------------------------------------------ MC-NNM


def test_mcnnm_single_treated_entry_noiseless():
    n = 12
    rng = np.random.default_rng(3)
    m = np.outer(rng.uniform(1, 2, n), rng.uniform(1, 2, n))
    o = m + fixed_effects(n, n, 3)
    z = np.zeros((n, n))
    z[4, 7] = 1.0
    o = o + 1.7 * z
    res = mc_nnm(o, z, lam=1e-8, max_iter=5000, rel_tol=1e-14)
    assert res.tau == pytest.approx(1.7, abs=1e-6)


def test_mcnnm_empty_control():
    z = np.ones((3, 3))
    z[2, 2] = 0.0
    with pytest.raises(EmptyControlRow):
        mc_nnm(np.ones((3, 3)), z, target_rank=1)
    z = np.zeros((3, 3))
    z[:, 1] = 1.0
    with pytest.raises(EmptyControlCol):
        mc_nnm(np.ones((3, 3)), z, target_rank=1)
    with pytest.raises(InputError):
        mc_nnm(np.ones((3, 3)), np.eye(3))


def test_mcnnm_monotone_and_tuned_rank():
    n = 20
    m = gen_lowrank_gamma(n, n, 2, 10.0, seed=4) + gen_noise(n, n, 0.5, seed=5)
    z = gen_pattern(PatternSpec("block", m1=5, m2=12), n, n, seed=6)
    res = mc_nnm(m + z, z, target_rank=2)
    trace = np.array(res.diagnostics["objective_trace"])
    assert np.all(np.diff(trace) <= 1e-10 * np.abs(trace[1:]))
    assert res.diagnostics["rank"] >= 2
    assert res.m_hat.shape == (n, n)


def test_mcnnm_shift_equivariance():
    n = 15
    o = gen_lowrank_gamma(n, n, 2, 10.0, seed=7) + gen_noise(n, n, 0.3, seed=8)
    z = gen_pattern(PatternSpec("stagger", m1=4, m2=6), n, n, seed=9)
    a = mc_nnm(o, z, lam=1.0, rel_tol=1e-12)
    b = mc_nnm(o + 3.0 * z, z, lam=1.0, rel_tol=1e-12)
    assert b.tau == pytest.approx(a.tau + 3.0, abs=1e-8)


# ------------------------------------------------------------ RSC


def test_rsc_twin_row():
    rng = np.random.default_rng(10)
    m = np.outer(rng.uniform(1, 3, 6), rng.uniform(1, 3, 8))
    m[0] = m[3]
    z = block(6, 8, [0], 5)
    res = rsc(m + 2.0 * z, z, target_rank=1)
    assert res.tau == pytest.approx(2.0, abs=1e-10)


def test_rsc_average_of_two_controls():
    rng = np.random.default_rng(11)
    f = rng.standard_normal((7, 2))
    g = rng.standard_normal((9, 2))
    m = f @ g.T
    m[0] = 0.5 * (m[1] + m[2])
    z = block(7, 9, [0], 4)
    res = rsc(m + 1.25 * z, z, target_rank=2)
    assert res.tau == pytest.approx(1.25, abs=1e-8)
    # the learned combination reproduces the hand-solved weights on the control span
    beta = res.diagnostics["weights"][0]
    controls = res.diagnostics["controls"]
    np.testing.assert_allclose(beta @ m[controls], m[0], atol=1e-8)


def test_rsc_errors():
    z = np.zeros((4, 6))
    z[0, [2, 4]] = 1.0
    with pytest.raises(PatternUnsupported):
        rsc(np.ones((4, 6)), z, 1)
    z = block(3, 5, [0, 1, 2], 2)
    with pytest.raises(NoControls):
        rsc(np.ones((3, 5)), z, 1)
    z = block(4, 5, [0], 0)
    with pytest.raises(PatternUnsupported):
        rsc(np.ones((4, 5)), z, 1)


def test_rsc_shift_equivariance():
    n = 15
    o = gen_lowrank_gamma(n, n, 2, 10.0, seed=12) + gen_noise(n, n, 0.3, seed=13)
    z = gen_pattern(PatternSpec("block", m1=4, m2=8), n, n, seed=14)
    assert rsc(o + 2.5 * z, z, 2).tau == pytest.approx(rsc(o, z, 2).tau + 2.5, abs=1e-8)
