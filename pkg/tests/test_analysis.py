import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rqloop.analysis import (
    TWO_PI_E, ChannelModel, bernoulli_scalar_asymptotic_var, bernoulli_scalar_bound,
    capacity_threshold, capacity_threshold_printed_markov, conditional_variance_path,
    contraction_factor, covariance_recursion, lyapunov_residual, lyapunov_system,
    markov_lyapunov_system, markov_scalar_asymptotic_var, markov_scalar_bound,
    solve_stationary_covariance, variance_closed_form_bernoulli, variance_sequence_scalar,
    vector_bernoulli_bound, vector_markov_bound,
)
from rqloop import matrixcore as mc
from rqloop.errors import DivergenceError, IllPosedError
from rqloop.lqr import ScalarPlant
from rqloop.switching import SwitchModel

INF = ChannelModel()
PLANT = ScalarPlant(3.3, closed_gain=0.4)


def test_channel_eta():
    assert INF.eta == 0.0
    assert ChannelModel(6).eta == pytest.approx(2 * math.pi * math.e / 4096, rel=1e-15)
    assert ChannelModel(6).eta_per_dim(2) == pytest.approx(TWO_PI_E / 64, rel=1e-15)
    with pytest.raises(ValueError):
        ChannelModel(0.0)
    with pytest.raises(ValueError):
        ChannelModel(3, epsilon=0.0)


def test_bernoulli_bound_infinite_capacity():
    rep = bernoulli_scalar_bound(PLANT, INF)
    assert rep.regime == "infinite_capacity"
    assert rep.bound == pytest.approx(0.84 / 10.73, abs=1e-12)
    assert rep.stable


def test_capacity_threshold_value():
    assert capacity_threshold(3.3) == pytest.approx(0.5 * math.log2(math.pi * math.e * 10.89 / 6), abs=1e-12)
    assert capacity_threshold(3.3) == pytest.approx(1.9771, abs=1e-4)
    # the alternative printed form is negative for the same plant
    assert capacity_threshold_printed_markov(3.3) < 0


def test_deadbeat_bound():
    plant = ScalarPlant(2.5, closed_gain=0.0)
    assert bernoulli_scalar_bound(plant, INF).bound == pytest.approx(1 / 2.5 ** 2, abs=1e-15)


def test_finite_capacity_bound_formula():
    ch = ChannelModel(6)
    G = 2.9 ** 2 / 12
    eg = ch.eta * G
    expected = (1 - 0.16 - eg) / (10.89 - 0.16 - eg)
    rep = bernoulli_scalar_bound(PLANT, ch)
    assert rep.regime == "finite_capacity"
    assert rep.bound == pytest.approx(expected, rel=1e-13)


def test_below_threshold_always_unstable():
    ch = ChannelModel(1.9)
    for p in (0.0, 0.01, 0.5):
        assert not bernoulli_scalar_bound(PLANT, ch, p).stable
        assert not markov_scalar_bound(PLANT, ch, SwitchModel.markov(p, 0.9)).stable
    assert bernoulli_scalar_bound(PLANT, ch).regime == "below_threshold"
    assert bernoulli_scalar_bound(PLANT, ch).bound == 0.0


def test_unstabilising_closed_loop():
    rep = bernoulli_scalar_bound(ScalarPlant(3.3, closed_gain=1.2), INF)
    assert rep.bound == 0.0 and not rep.stable and rep.warnings


def test_bernoulli_asymptotic_examples():
    v = bernoulli_scalar_asymptotic_var(PLANT, INF, 0.05)
    omega2 = 10.89 * 0.05 + 0.16 * 0.95
    assert omega2 == pytest.approx(0.6965)
    assert v == pytest.approx(1 / (1 - omega2), rel=1e-14)
    assert v == pytest.approx(3.2949, abs=1e-4)
    assert bernoulli_scalar_asymptotic_var(ScalarPlant(2.0, closed_gain=0.0, sigma_w2=1.7), INF, 0.0) == 1.7
    assert bernoulli_scalar_asymptotic_var(PLANT, INF, 0.1) == math.inf


def test_bernoulli_report_carries_moment():
    rep = bernoulli_scalar_bound(PLANT, ChannelModel(6), 0.05)
    assert rep.stable and math.isfinite(rep.asymptotic_second_moment)
    bad = bernoulli_scalar_bound(PLANT, ChannelModel(6), 0.3)
    assert not bad.stable and bad.to_dict()["asymptotic_second_moment"] == "inf"


def test_markov_bound_examples():
    rep = markov_scalar_bound(PLANT, INF)
    assert rep.bound == pytest.approx(0.84 / 9.89, abs=1e-12)
    assert rep.bound_kind == "p_over_q"
    assert markov_scalar_bound(PLANT, INF, SwitchModel.markov(0.05, 0.95)).stable
    bad = markov_scalar_bound(PLANT, INF, SwitchModel.markov(0.25, 0.95))
    assert bad.parameter == pytest.approx(0.2632, abs=1e-4)
    assert not bad.stable


def test_markov_asymptotic_examples():
    v = markov_scalar_asymptotic_var(PLANT, INF, 0.05, 0.95)
    r = 0.05 / 0.95
    assert v == pytest.approx((1 + r) / (1 - 0.16 - r * (10.89 - 1)), rel=1e-14)
    assert v == pytest.approx(3.29489, abs=1e-5)
    assert markov_scalar_asymptotic_var(PLANT, INF, 0.0, 0.5) == pytest.approx(1 / (1 - 0.16), rel=1e-15)


def test_markov_boundary_is_unstable():
    # exactly at the bound the denominator vanishes
    plant = ScalarPlant(3.0, closed_gain=0.5)
    ratio = (1 - 0.25) / (9 - 1)
    q = 0.5
    assert markov_scalar_asymptotic_var(plant, INF, ratio * q, q) == math.inf


def test_markov_iid_case_matches_bernoulli():
    # with p + q = 1 the chain is i.i.d. Bernoulli(p)
    ch = ChannelModel(6)
    assert markov_scalar_asymptotic_var(PLANT, ch, 0.05, 0.95) == pytest.approx(
        bernoulli_scalar_asymptotic_var(PLANT, ch, 0.05), rel=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.1, 5.0), st.floats(-0.95, 0.95), st.floats(2.0, 12.0))
def test_bound_monotone_in_capacity(alpha, c, C):
    plant = ScalarPlant(alpha, closed_gain=c)
    lo = bernoulli_scalar_bound(plant, ChannelModel(C)).bound
    hi = bernoulli_scalar_bound(plant, ChannelModel(C + 0.5)).bound
    top = bernoulli_scalar_bound(plant, INF).bound
    assert lo <= hi + 1e-15 <= top + 2e-15
    mlo = markov_scalar_bound(plant, ChannelModel(C)).bound
    assert mlo <= markov_scalar_bound(plant, ChannelModel(C + 0.5)).bound + 1e-15


def test_contraction_certificate_below_bound():
    for p in np.linspace(0, 0.078, 7):
        assert 10.89 * p + 0.16 * (1 - p) < 1


def test_variance_sequence_examples():
    s, d = variance_sequence_scalar(ScalarPlant(3.3, closed_gain=0.4, sigma_0_2=4.0), SwitchModel.bernoulli(0.1), INF, 3)
    assert s[1] == pytest.approx(1.233 * 4 + 1, rel=1e-14)
    assert np.all(d == 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.1, 4.0), st.floats(-0.9, 0.9), st.floats(0.0, 1.0), st.floats(0.0, 5.0))
def test_variance_sequence_closed_form(alpha, c, p, s0):
    plant = ScalarPlant(alpha, closed_gain=c, sigma_0_2=s0)
    s, _ = variance_sequence_scalar(plant, SwitchModel.bernoulli(p), INF, 200)
    omega2 = alpha ** 2 * p + c ** 2 * (1 - p)
    for k in (0, 1, 17, 200):
        ref = variance_closed_form_bernoulli(omega2, s0, 1.0, k)
        assert s[k] == pytest.approx(ref, rel=1e-10, abs=1e-300)


def test_closed_form_unit_omega_limit():
    assert variance_closed_form_bernoulli(1.0, 2.0, 0.5, 10) == 2.0 + 5.0


def test_variance_sequence_finite_capacity_step():
    ch = ChannelModel(6)
    plant = ScalarPlant(3.3, closed_gain=0.4, sigma_0_2=4.0)
    s, d = variance_sequence_scalar(plant, SwitchModel.bernoulli(0.05), ch, 1)
    G = 2.9 ** 2 / 12
    w2 = 10.89 * 0.05 + 0.16 * 0.95
    d0 = ch.eta * 4 + 1e-3
    assert d[0] == pytest.approx(d0)
    assert s[1] == pytest.approx(w2 * 4 + G * 0.95 * d0 + 1, rel=1e-14)
    assert d[1] == pytest.approx(d0 * (w2 + ch.eta * G * 0.95) + ch.eta + 1e-3 * (1 - w2), rel=1e-14)


def test_variance_sequence_converges_to_asymptote():
    ch = ChannelModel(6)
    s, _ = variance_sequence_scalar(PLANT, SwitchModel.bernoulli(0.05), ch, 400)
    assert s[-1] == pytest.approx(bernoulli_scalar_asymptotic_var(PLANT, ch, 0.05), rel=1e-6)
    s, _ = variance_sequence_scalar(PLANT, SwitchModel.markov(0.05, 0.95), ch, 400)
    assert s[-1] == pytest.approx(markov_scalar_asymptotic_var(PLANT, ch, 0.05, 0.95), rel=1e-6)


def test_conditional_path_constant_gamma():
    ch = ChannelModel(6)
    s, d = conditional_variance_path(PLANT, np.zeros(30, dtype=int), ch)
    seq, dseq = variance_sequence_scalar(PLANT, SwitchModel.bernoulli(0.0), ch, 30)
    np.testing.assert_allclose(s, seq, rtol=1e-14)
    np.testing.assert_allclose(d, dseq, rtol=1e-14)


def test_vector_bounds_examples():
    A = np.diag([2.0, 0.5])
    Gm = np.diag([0.1, 0.1])
    assert vector_bernoulli_bound(A, Gm).bound == pytest.approx(0.99 / 3.99, abs=1e-12)
    assert vector_markov_bound(A, Gm).bound == pytest.approx(0.33, abs=1e-12)
    nb = vector_bernoulli_bound(A, np.diag([1.2, 0.0]))
    assert nb.bound == 0.0 and nb.warning
    assert vector_markov_bound(A, np.diag([1.0, 0.3])).bound == 0.0
    with pytest.raises(IllPosedError):
        vector_bernoulli_bound(np.diag([0.5, 0.5]), np.diag([0.9, 0.1]))
    with pytest.raises(IllPosedError):
        vector_markov_bound(np.diag([0.9, 0.5]), np.diag([0.1, 0.1]))


@settings(max_examples=60, deadline=None)
@given(st.floats(1.05, 6.0), st.floats(-0.99, 0.99))
def test_vector_bounds_reduce_to_scalar(alpha, c):
    plant = ScalarPlant(alpha, closed_gain=c)
    vb = vector_bernoulli_bound([[alpha]], [[c]])
    vm = vector_markov_bound([[alpha]], [[c]])
    assert vb.raw_bound == pytest.approx(bernoulli_scalar_bound(plant, INF).raw_bound, abs=1e-12)
    assert vm.raw_bound == pytest.approx(markov_scalar_bound(plant, INF).raw_bound, abs=1e-12)


def test_covariance_recursion_examples():
    rng = np.random.default_rng(0)
    A, Gm, X = rng.standard_normal((3, 3, 3))
    P = X @ X.T
    W = np.eye(3)
    np.testing.assert_allclose(covariance_recursion(A, Gm, W, 1.0, P), A @ P @ A.T + W, atol=1e-12)
    np.testing.assert_array_equal(covariance_recursion(A, np.zeros((3, 3)), W, 0.0, P), W)
    s = covariance_recursion([[3.3]], [[0.4]], [[1.0]], 0.05, [[2.0]])
    assert s[0, 0] == pytest.approx(0.6965 * 2 + 1)


def test_lyapunov_scalar_oracle():
    P = solve_stationary_covariance([[3.3]], [[0.4]], [[1.0]], 0.05)
    assert P[0, 0] == pytest.approx(bernoulli_scalar_asymptotic_var(PLANT, INF, 0.05), rel=1e-12)


def test_lyapunov_diagonal_decouples():
    A = np.diag([1.5, 2.0, 1.2])
    Gm = np.diag([0.3, -0.2, 0.5])
    w = 0.1
    P = solve_stationary_covariance(A, Gm, np.eye(3), w)
    expected = 1 / (1 - (w * np.diag(A) ** 2 + (1 - w) * np.diag(Gm) ** 2))
    np.testing.assert_allclose(P, np.diag(expected), atol=1e-13)


def test_lyapunov_methods_agree_and_residual():
    rng = np.random.default_rng(8)
    done = 0
    while done < 10:
        A = rng.standard_normal((3, 3))
        Gm = rng.standard_normal((3, 3)) * 0.2
        X = rng.standard_normal((3, 3))
        W = X @ X.T + np.eye(3)
        w = 0.05
        if contraction_factor(A, Gm, w) >= 0.95:
            continue
        P1 = solve_stationary_covariance(A, Gm, W, w)
        P2 = solve_stationary_covariance(A, Gm, W, w, method="fixed_point")
        assert np.max(np.abs(P1 - P2)) <= 1e-8
        assert lyapunov_residual(A, Gm, W, w, P1) <= 1e-9
        assert mc.is_positive_definite(mc.symmetrize(P1))
        done += 1


def test_discrete_lyapunov_by_iteration():
    Gm = np.array([[0.5, 0.2], [-0.1, 0.3]])
    W = np.array([[1.0, 0.2], [0.2, 2.0]])
    P = solve_stationary_covariance(np.eye(2) * 3, Gm, W, 0.0)
    X = W.copy()
    for _ in range(200):
        X = Gm @ X @ Gm.T + W
    np.testing.assert_allclose(P, X, atol=1e-10)


def test_lyapunov_rejects_non_contraction():
    with pytest.raises(DivergenceError):
        solve_stationary_covariance([[3.3]], [[0.4]], [[1.0]], 0.3)
    with pytest.raises(ValueError):
        solve_stationary_covariance([[3.3]], [[0.4]], [[1.0]], 0.05, method="magic")


def test_lyapunov_system_matches_kronecker():
    rng = np.random.default_rng(4)
    A, Gm = rng.standard_normal((2, 3, 3))
    w = 0.3
    M, index = lyapunov_system(A, Gm, w)
    K = w * np.kron(A, A) + (1 - w) * np.kron(Gm, Gm)
    X = rng.standard_normal((3, 3))
    S = X + X.T
    s = np.array([S[i, j] for i, j in index])
    full = (K @ S.reshape(-1)).reshape(3, 3)
    np.testing.assert_allclose(M @ s, [full[i, j] for i, j in index], atol=1e-12)
    Mm, _ = markov_lyapunov_system(A, Gm, 0.3, 0.7)
    np.testing.assert_allclose(Mm, M, atol=1e-15)
