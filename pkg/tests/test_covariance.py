import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hurwitz
from polyak_lsa.covariance import (
    classical_cov,
    covariance_bundle,
    empirical_stationary,
    plug_back_residual,
    sigma_star,
    solve_stationary_cov,
    stationary_moment_bound,
)
from polyak_lsa.errors import NotHurwitz, SingularOperator
from polyak_lsa.oracles import (
    DeterministicOracle,
    GaussianOracle,
    ProblemSpec,
    RegressionOracle,
)
from polyak_lsa.spectral import analyze, stability_threshold


def scalar(a=1.0, b=1.0, a_std=0.0, b_std=1.0):
    return GaussianOracle.isotropic([[a]], [b], a_std=a_std, b_std=b_std)


def fixed_point_cov(A, s_A, Sigma_xi, theta_star, eta, iters=200000, tol=1e-15):
    """Stationary covariance of theta_{t+1} = theta_t - eta (A_t theta_t - b_t) by iterating
    the one-step second-moment map, with isotropic Gaussian matrix noise of std s_A."""
    d = A.shape[0]
    M = np.eye(d) - eta * A
    S = Sigma_xi + s_A**2 * float(theta_star @ theta_star) * np.eye(d)
    C = np.zeros((d, d))
    for _ in range(iters):
        nxt = M @ C @ M.T + eta**2 * (S + s_A**2 * np.trace(C) * np.eye(d))
        if np.max(np.abs(nxt - C)) < tol:
            return nxt
        C = nxt
    return C


def test_scalar_closed_form():
    o = scalar()
    L = solve_stationary_cov(o.problem, o.noise_model(), 0.1)
    assert L[0, 0] == pytest.approx(0.1 / 1.9, abs=1e-12)
    assert L[0, 0] == pytest.approx(0.0526316, abs=1e-7)


def test_identity_decouples():
    o = GaussianOracle.isotropic(np.eye(2), [0.0, 0.0], b_std=1.0)
    np.testing.assert_allclose(solve_stationary_cov(o.problem, o.noise_model(), 0.1),
                               0.1 / 1.9 * np.eye(2), atol=1e-12)


def test_zero_noise_gives_zero():
    p = ProblemSpec.from_arrays([[1.0, 0.5], [-0.2, 2.0]], [1.0, 0.0])
    nm = DeterministicOracle(p).noise_model()
    assert not np.any(solve_stationary_cov(p, nm, 0.2))
    assert stationary_moment_bound(p, nm, 0.2) == 0.0


def test_sigma_star_cases():
    o = GaussianOracle.isotropic(np.eye(2), [0.0, 0.0], a_std=0.7, b_std=0.5)
    np.testing.assert_allclose(sigma_star(o.problem, o.noise_model()), 0.25 * np.eye(2))
    o = GaussianOracle.isotropic(np.eye(2), [1.0, 0.0], a_std=0.0, b_std=0.5)
    np.testing.assert_allclose(sigma_star(o.problem, o.noise_model()), 0.25 * np.eye(2))
    c, s, sx = 3.0, 0.4, 0.5
    o = scalar(a=1.0, b=c, a_std=s, b_std=sx)
    assert sigma_star(o.problem, o.noise_model())[0, 0] == pytest.approx(sx**2 + s**2 * c**2)


def test_regression_sigma_star_against_monte_carlo():
    from polyak_lsa.rng import make_streams

    o = RegressionOracle(np.array([1.0, -0.5]), 0.5)
    A, b = o.sample_batch(make_streams(0, 7), 400000)
    th = o.problem.theta_star
    g = A @ th - b
    emp = g.T @ g / len(g)
    np.testing.assert_allclose(sigma_star(o.problem, o.noise_model()), emp, atol=0.02)


@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_solver_matches_fixed_point(d, seed):
    rng = np.random.default_rng(seed)
    A = random_hurwitz(rng, d, margin=0.5)
    s_A = 0.3
    o = GaussianOracle.isotropic(A, rng.standard_normal(d), a_std=s_A, b_std=1.0)
    nm = o.noise_model()
    info = analyze(A)
    eta = 0.5 * stability_threshold(info, np.sqrt(nm.v_A2))
    L = solve_stationary_cov(o.problem, nm, eta)
    ref = fixed_point_cov(A, s_A, np.eye(d), o.problem.theta_star, eta)
    np.testing.assert_allclose(L, ref, rtol=1e-6, atol=1e-10 * np.abs(ref).max())


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_bundle_invariants(d, seed):
    rng = np.random.default_rng(seed)
    A = random_hurwitz(rng, d, margin=0.3)
    o = GaussianOracle.isotropic(A, rng.standard_normal(d), a_std=0.2, b_std=1.0)
    nm = o.noise_model()
    eta = 0.5 * stability_threshold(analyze(A), np.sqrt(nm.v_A2))
    B = covariance_bundle(o.problem, nm, eta)
    for M in (B.sigma_star, B.lambda_eta, B.gamma_eta, B.classical):
        np.testing.assert_allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max()))
        assert np.linalg.eigvalsh(M)[0] >= -1e-10 * max(1.0, np.abs(M).max())
    assert B.residual <= 1e-9 * np.linalg.norm(eta * B.sigma_star)
    assert np.linalg.eigvalsh(B.correction)[0] >= -1e-10 * max(1.0, np.abs(B.gamma_eta).max())
    assert plug_back_residual(o.problem, nm, eta, B.lambda_eta) == pytest.approx(B.residual)
    assert np.trace(B.lambda_eta) <= stationary_moment_bound(o.problem, nm, eta) * (1 + 1e-12)


def test_no_matrix_noise_gamma_is_classical():
    o = GaussianOracle.isotropic([[2.0, 1.0], [0.0, 1.0]], [1.0, 1.0], b_std=1.0)
    for eta in (0.01, 0.1, 0.3):
        B = covariance_bundle(o.problem, o.noise_model(), eta)
        np.testing.assert_allclose(B.gamma_eta, B.classical, atol=1e-14)
    B = covariance_bundle(*(lambda s: (s.problem, s.noise_model()))(scalar()), 0.1)
    assert B.gamma_eta[0, 0] == pytest.approx(1.0)


def test_correction_is_linear_in_eta():
    o = GaussianOracle.isotropic([[1.0, 0.5], [-0.5, 1.5]], [2.0, -1.0], a_std=1.0, b_std=0.5)
    nm = o.noise_model()
    errs = []
    for eta in (1e-2, 5e-3, 2.5e-3):
        B = covariance_bundle(o.problem, nm, eta)
        errs.append(np.linalg.norm(B.correction) / np.linalg.norm(B.classical))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.01)


def test_moment_bound_scalar():
    o = scalar()
    nm = o.noise_model()
    assert stationary_moment_bound(o.problem, nm, 0.1) == pytest.approx(0.1)
    assert np.trace(solve_stationary_cov(o.problem, nm, 0.1)) <= 0.1


def test_moment_bound_random_sweep():
    rng = np.random.default_rng(11)
    A = random_hurwitz(rng, 4, margin=0.3)
    o = GaussianOracle.isotropic(A, rng.standard_normal(4), a_std=0.3, b_std=1.0)
    nm = o.noise_model()
    top = stability_threshold(analyze(A), np.sqrt(nm.v_A2))
    for eta in rng.uniform(0.0, top, 100):
        eta = max(eta, 1e-6)
        assert np.trace(solve_stationary_cov(o.problem, nm, eta)) <= \
            stationary_moment_bound(o.problem, nm, eta) * (1 + 1e-12)


def test_singular_operator_at_threshold():
    o = scalar()
    with pytest.raises(SingularOperator):
        solve_stationary_cov(o.problem, o.noise_model(), 2.0)


def test_not_hurwitz():
    o = GaussianOracle.isotropic([[0.0, 1.0], [-1.0, 0.0]], [0.0, 0.0], b_std=1.0)
    with pytest.raises(NotHurwitz):
        solve_stationary_cov(o.problem, o.noise_model(), 0.1)


def test_classical_cov():
    o = GaussianOracle.isotropic([[2.0, 0.0], [0.0, 4.0]], [1.0, 1.0], b_std=1.0)
    np.testing.assert_allclose(classical_cov(o.problem, o.noise_model()), np.diag([0.25, 1 / 16]))


def test_empirical_zero_noise():
    p = ProblemSpec.from_arrays([[1.0, 0.0], [0.0, 2.0]], [1.0, 1.0])
    est = empirical_stationary(p, DeterministicOracle(p), 0.1, n_samples=1000, burn_in=10)
    assert not np.any(est.cov)


def test_empirical_matches_solver_with_matrix_noise():
    o = GaussianOracle.isotropic([[1.0, 0.5], [-0.5, 1.5]], [2.0, -1.0], a_std=0.5, b_std=0.5)
    eta = 0.1
    L = solve_stationary_cov(o.problem, o.noise_model(), eta)
    est = empirical_stationary(o.problem, o, eta, n_samples=400_000, seed=3)
    assert np.all(np.abs(est.cov - L) <= 3.0 * est.cov_stderr)


def test_empirical_scalar_within_five_percent():
    o = scalar()
    est = empirical_stationary(o.problem, o, 0.1, n_samples=300_000, seed=1)
    assert est.cov[0, 0] == pytest.approx(0.1 / 1.9, rel=0.05)
