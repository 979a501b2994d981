import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hurwitz
from polyak_lsa.errors import NonErgodic
from polyak_lsa.oracles import (
    DeterministicOracle,
    ExactTDOracle,
    GaussianOracle,
    MrpSpec,
    NoiseModel,
    ProblemSpec,
    RegressionOracle,
    counterexample_oracle,
    estimate_noise_model,
    lift_momentum,
    minimax_oracle,
    noise_model_for,
    td_linear_fa_oracle,
)
from polyak_lsa.rng import make_streams
from polyak_lsa.spectral import Regime, analyze


def _mc_mean_within(samples, target, n_se=4.0):
    m = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    assert np.all(np.abs(m - target) <= n_se * se + 1e-12)


def test_problem_solution_residual(rng):
    A = random_hurwitz(rng, 4)
    p = ProblemSpec.from_arrays(A, rng.standard_normal(4))
    assert np.linalg.norm(p.residual(p.theta_star)) <= 1e-10 * (1 + np.linalg.norm(p.b_bar))


def test_problem_shape_mismatch():
    with pytest.raises(ValueError):
        ProblemSpec.from_arrays(np.eye(2), [1.0, 2.0, 3.0])


def test_deterministic_oracle_is_exact():
    p = ProblemSpec.from_arrays([[2.0, 1.0], [0.0, 3.0]], [1.0, -1.0])
    A, b = DeterministicOracle(p).sample_batch(make_streams(0, 1), 5)
    assert np.array_equal(A, np.broadcast_to(p.A_bar, A.shape))
    assert np.array_equal(b, np.broadcast_to(p.b_bar, b.shape))


def test_deterministic_noise_model_is_zero():
    p = ProblemSpec.from_arrays(np.eye(3), np.ones(3))
    nm = noise_model_for(DeterministicOracle(p))
    assert not np.any(nm.cov_xi) and not np.any(nm.xi_A_second_moment) and not np.any(nm.cross)
    assert nm.v_A2 == 0.0 and nm.v_b2 == 0.0


def test_exact_td_one_entry_per_row():
    mrp = MrpSpec.random(5, 0.9, np.random.default_rng(3))
    o = ExactTDOracle(mrp)
    A, b = o.sample_batch(make_streams(1, 1), 20000)
    Z = (np.eye(5) - A) / 0.9
    assert np.allclose(Z, np.round(Z))
    assert set(np.unique(np.round(Z))) <= {0.0, 1.0}
    np.testing.assert_array_equal(np.round(Z).sum(axis=2), 1.0)
    _mc_mean_within(Z.reshape(len(Z), -1), mrp.transition_P.ravel())
    _mc_mean_within(b, mrp.reward_r)


def test_exact_td_second_moment_matches_multinomial():
    mrp = MrpSpec.random(3, 0.8, np.random.default_rng(7))
    o = ExactTDOracle(mrp)
    nm = o.noise_model()
    A, _ = o.sample_batch(make_streams(2, 1), 200000)
    Xi = A - o.problem.A_bar
    prods = np.einsum("nij,nkl->nikjl", Xi, Xi).reshape(len(Xi), -1)
    _mc_mean_within(prods, nm.xi_A_second_moment.ravel())
    # per row: gamma^2 (diag(p) - p p^T), rows independent
    g2 = 0.8**2
    P = mrp.transition_P
    K = nm.xi_A_second_moment.reshape(3, 3, 3, 3)  # [i, k, j, l] = E[Xi_ij Xi_kl]
    for i in range(3):
        np.testing.assert_allclose(K[i, i], g2 * (np.diag(P[i]) - np.outer(P[i], P[i])), atol=1e-14)
        for k in range(3):
            if k != i:
                np.testing.assert_allclose(K[i, k], 0.0, atol=1e-14)


def test_regression_oracle_structure():
    theta = np.array([1.0, -2.0, 0.5])
    o = RegressionOracle(theta, 0.3)
    A, b = o.sample_batch(make_streams(4, 1), 40000)
    np.testing.assert_allclose(A, np.transpose(A, (0, 2, 1)))
    assert np.all(np.linalg.matrix_rank(A[:50]) == 1)
    _mc_mean_within(A.reshape(len(A), -1), np.eye(3).ravel())
    np.testing.assert_allclose(o.problem.theta_star, theta)


def test_regression_noise_model_against_monte_carlo():
    o = RegressionOracle(np.array([1.0, -0.5]), 0.5)
    exact = o.noise_model()
    mc = estimate_noise_model(o, 400000, make_streams(5, 1))
    np.testing.assert_allclose(mc.cov_xi, exact.cov_xi, atol=0.05)
    np.testing.assert_allclose(mc.xi_A_second_moment, exact.xi_A_second_moment, atol=0.1)
    np.testing.assert_allclose(mc.cross, exact.cross, atol=0.05)


def test_gaussian_b_noise_cov_within_3_se():
    p = ProblemSpec.from_arrays(np.eye(2), np.zeros(2))
    o = GaussianOracle(p, 0.0, 0.49 * np.eye(2))
    _, b = o.sample_batch(make_streams(6, 1), 1_000_000)
    xi = b - p.b_bar
    prods = np.einsum("ni,nj->nij", xi, xi).reshape(len(xi), -1)
    m = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / np.sqrt(len(xi))
    assert np.all(np.abs(m - 0.49 * np.eye(2).ravel()) <= 3 * se)


@given(st.integers(0, 2**32 - 1))
def test_second_moment_maps_psd_to_psd(seed):
    rng = np.random.default_rng(seed)
    mrp = MrpSpec.random(3, 0.9, rng)
    nm = ExactTDOracle(mrp).noise_model()
    G = rng.standard_normal((3, 3))
    out = nm.apply_A(G @ G.T)
    assert np.linalg.eigvalsh(0.5 * (out + out.T))[0] >= -1e-10
    assert np.linalg.eigvalsh(nm.cov_xi)[0] >= -1e-8
    np.testing.assert_allclose(nm.cov_xi, nm.cov_xi.T, atol=1e-12)


def test_momentum_lift_block_structure():
    a, alpha, eta = 2.0, 0.5, 0.1
    o = GaussianOracle.isotropic([[a]], [1.0])
    m = lift_momentum(o, alpha, eta)
    np.testing.assert_allclose(m.problem.A_bar, [[0.0, 1.0], [-a, alpha + eta * a]])
    np.testing.assert_allclose(m.problem.A_bar @ m.problem.theta_star, m.problem.b_bar)
    np.testing.assert_allclose(m.problem.theta_star, [0.5, 0.0])
    np.testing.assert_allclose(m.problem.b_bar, [0.0, -1.0])


def test_momentum_lift_quadratic_roots():
    # eta -> 0 leaves nu^2 - alpha nu + lam = 0
    a, alpha = 1.0, 3.0
    M = np.array([[0.0, 1.0], [-a, alpha]])
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(M).real),
                               [(3 - np.sqrt(5)) / 2, (3 + np.sqrt(5)) / 2])


def test_linear_fa_identity_features_reduce_to_weighted_td():
    mrp = MrpSpec.random(4, 0.7, np.random.default_rng(9))
    o = td_linear_fa_oracle(mrp, np.eye(4))
    mu = mrp.stationary()
    D = np.diag(mu)
    np.testing.assert_allclose(o.problem.A_bar, D @ (np.eye(4) - 0.7 * mrp.transition_P), atol=1e-12)
    np.testing.assert_allclose(o.problem.b_bar, D @ mrp.reward_r, atol=1e-12)
    np.testing.assert_allclose(o.problem.theta_star, mrp.value_function(), atol=1e-10)


def test_linear_fa_constant_feature_no_discount():
    mrp = MrpSpec.random(5, 0.0, np.random.default_rng(10))
    o = td_linear_fa_oracle(mrp, np.ones((5, 1)))
    mu = mrp.stationary()
    np.testing.assert_allclose(o.problem.A_bar, [[1.0]])
    np.testing.assert_allclose(o.problem.b_bar, [mu @ mrp.reward_r])
    np.testing.assert_allclose(o.problem.theta_star, [mu @ mrp.reward_r])


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.99))
def test_linear_fa_drift_positivity(seed, gamma):
    rng = np.random.default_rng(seed)
    mrp = MrpSpec.random(6, gamma, rng)
    Phi = rng.standard_normal((6, 3))
    o = td_linear_fa_oracle(mrp, Phi)
    mu = mrp.stationary()
    lam_min = np.linalg.eigvalsh(Phi.T @ np.diag(mu) @ Phi)[0]
    assert np.linalg.eigvals(o.problem.A_bar).real.min() >= (1 - gamma) * lam_min - 1e-10


def test_non_ergodic_chain():
    with pytest.raises(NonErgodic):
        MrpSpec(np.eye(2), np.zeros(2), 0.5).stationary()


def test_minimax_is_skew_and_critical():
    o = minimax_oracle([[0.0, 1.0], [1.0, 0.0]], [0.5], [-0.5])
    np.testing.assert_allclose(o.problem.A_bar, [[0.0, 1.0], [-1.0, 0.0]])
    info = analyze(o.problem.A_bar)
    assert info.regime is Regime.CRITICAL
    assert o.is_deterministic


def test_minimax_larger_skew_block():
    P = np.zeros((5, 5))
    P[:2, 2:] = np.arange(6.0).reshape(2, 3) + 1
    P[2:, :2] = P[:2, 2:].T
    o = minimax_oracle(P, np.ones(2), np.ones(3), noise_std=0.1)
    A = o.problem.A_bar
    np.testing.assert_allclose(A, -A.T)
    np.testing.assert_allclose(np.linalg.eigvals(A).real, 0.0, atol=1e-10)


def test_counterexample_spectrum():
    o = counterexample_oracle(2)
    lam = np.linalg.eigvals(o.problem.A_bar)
    assert np.min(np.abs(lam)) == pytest.approx(1.0)
    assert lam.real.min() == pytest.approx(0.0, abs=1e-12)
    info = analyze(o.problem.A_bar)
    assert not info.diagonalizable
    _, V = np.linalg.eig(o.problem.A_bar)
    assert np.linalg.cond(V) > 1e8


def test_zero_noise_model_shape():
    nm = NoiseModel.zero(3)
    assert nm.dimension == 3
    assert nm.xi_A_second_moment.shape == (9, 9)
