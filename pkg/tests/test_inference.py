import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from statsmodels.stats.proportion import proportion_confint

from polyak_lsa.covariance import covariance_bundle
from polyak_lsa.errors import ContractNotCertified, NotHurwitz
from polyak_lsa.inference import (
    DeviationTerms,
    coverage_study,
    deviation_terms,
    ellipse,
    linfty_bound_terms,
    q_functional,
    wilson_interval,
)
from polyak_lsa.lsa import RunConfig
from polyak_lsa.oracles import (
    DeterministicOracle,
    ExactTDOracle,
    GaussianOracle,
    MrpSpec,
    NoiseModel,
    ProblemSpec,
)
from polyak_lsa.spectral import analyze


def grid_q(v, delta, n=1_000_000):
    """Brute-force scan: smallest grid point where the exponential sum drops to delta."""
    v = np.asarray(v, float)
    top = 1.01 * v.max() * math.log(v.size / delta)
    q = np.linspace(0.0, top, n)
    f = np.exp(-q[:, None] / v[None, :]).sum(axis=1) - delta
    i = int(np.argmax(f <= 0))
    # linear interpolation inside the bracketing cell
    return q[i - 1] + (q[i] - q[i - 1]) * f[i - 1] / (f[i - 1] - f[i])


def test_q_scalar():
    assert q_functional([1.0], 0.1) == pytest.approx(math.log(10.0), abs=1e-9)


@given(st.integers(1, 20), st.floats(0.01, 50.0), st.floats(1e-4, 0.9))
def test_q_equal_entries(d, s, delta):
    assert q_functional(np.full(d, s), delta) == pytest.approx(s * math.log(d / delta), rel=1e-9)


def test_q_two_entries_against_grid():
    q = q_functional([1.0, 2.0], 0.05)
    assert math.exp(-q) + math.exp(-q / 2) == pytest.approx(0.05, rel=1e-9)
    assert q == pytest.approx(grid_q([1.0, 2.0], 0.05), abs=1e-6)


@given(st.lists(st.floats(0.05, 10.0), min_size=1, max_size=8), st.floats(1e-3, 0.5))
def test_q_solves_its_equation(v, delta):
    q = q_functional(v, delta)
    assert np.exp(-q / np.asarray(v)).sum() <= delta * (1 + 1e-9)
    assert np.exp(-(q * (1 - 1e-6)) / np.asarray(v)).sum() >= delta * (1 - 1e-9)


def test_q_rejects_bad_input():
    with pytest.raises(ValueError):
        q_functional([1.0, -1.0], 0.1)
    with pytest.raises(ValueError):
        q_functional([1.0], 1.5)


def _with_tails(nm, sigma_A=0.0, sigma_b=0.0, alpha=0.0, beta=0.0):
    return dataclasses.replace(nm, sigma_A=sigma_A, sigma_b=sigma_b, alpha=alpha, beta=beta)


def test_deviation_zero_noise_at_solution():
    p = ProblemSpec.from_arrays([[2.0, 0.0], [0.0, 1.0]], [2.0, -3.0])
    info = analyze(p.A_bar)
    nm = _with_tails(NoiseModel.zero(2))
    eta, T, delta = 0.1, 10_000, 0.05
    dev = deviation_terms(p, info, nm, p.theta_star, eta, T, delta)
    V = info.condition_number**2 / info.min_abs_eigenvalue * np.linalg.norm(p.theta_star)
    assert dev.V_theta == pytest.approx(V)
    assert dev.Delta == pytest.approx(V / (eta * math.sqrt(T)) * math.log(T / delta) ** 2)


@pytest.mark.parametrize("d", [1, 3])
def test_deviation_hand_evaluation(d):
    p = ProblemSpec.from_arrays(np.eye(d), np.zeros(d))
    nm = _with_tails(NoiseModel.zero(d), sigma_b=1.0)
    T = 2  # T / delta = e with delta < 1 forces a short horizon
    dev = deviation_terms(p, analyze(p.A_bar), nm, np.zeros(d), 1.0, T, T / math.e)
    assert dev.V_theta == pytest.approx(math.sqrt(d))
    assert dev.Delta == pytest.approx(math.sqrt(d) * (T**-0.25 + T**-0.5))


def test_deviation_shrinks_with_T():
    p = ProblemSpec.from_arrays(np.eye(2), np.ones(2))
    nm = _with_tails(NoiseModel.zero(2))
    info = analyze(p.A_bar)
    a = deviation_terms(p, info, nm, np.zeros(2), 0.1, 10_000, 0.05)
    b = deviation_terms(p, info, nm, np.zeros(2), 0.1, 40_000, 0.05)
    assert b.Delta / a.Delta <= 1.0


def test_deviation_requires_tails_and_hurwitz():
    p = ProblemSpec.from_arrays(np.eye(1), np.ones(1))
    nm = dataclasses.replace(NoiseModel.zero(1), sigma_A=math.nan)
    with pytest.raises(ValueError):
        deviation_terms(p, analyze(p.A_bar), nm, [0.0], 0.1, 100, 0.1)
    rot = ProblemSpec.from_arrays([[0.0, 1.0], [-1.0, 0.0]], [0.0, 0.0])
    with pytest.raises(NotHurwitz):
        deviation_terms(rot, analyze(rot.A_bar), NoiseModel.zero(2), [0.0, 0.0], 0.1, 100, 0.1)


def _scalar_bundle():
    o = GaussianOracle.isotropic([[1.0]], [1.0], b_std=1.0)
    return o, covariance_bundle(o.problem, o.noise_model(), 0.01)


def test_ellipse_substitution():
    o, bundle = _scalar_bundle()
    T, c = 400, 2.5
    dev = DeviationTerms(0.0, 0.0, T, 1 / math.e, 0.01, (0.0, 0.0, 0.0, 0.0))
    E = ellipse(o.problem, bundle, dev, [1.2], c=c, delta=1 / math.e)
    np.testing.assert_allclose(E.shape_B, [[1.0]])
    assert E.radius == pytest.approx(c / math.sqrt(T))


def test_ellipse_center_and_monotone_in_c():
    o = GaussianOracle.isotropic([[1.0, 0.3], [0.0, 2.0]], [1.0, 1.0], b_std=1.0)
    nm = _with_tails(o.noise_model(), sigma_b=1.0)
    bundle = covariance_bundle(o.problem, nm, 0.05)
    dev = deviation_terms(o.problem, analyze(o.problem.A_bar), nm, np.zeros(2), 0.05, 1000, 0.05)
    center = np.array([0.4, 0.6])
    probes = center + np.random.default_rng(0).standard_normal((100, 2)) * 3.0
    prev = np.zeros(100, bool)
    for c in (0.0, 0.5, 1.0, 5.0, 50.0, 1e6):
        E = ellipse(o.problem, bundle, dev, center, c=c)
        assert E.contains(center)
        inside = E.contains(probes)
        assert np.all(inside[prev])
        prev = inside
    assert prev.all()


def test_linf_exact_td_contraction():
    mrp = MrpSpec.random(4, 0.9, np.random.default_rng(1))
    o = ExactTDOracle(mrp)
    assert 1.0 / o.linf_contraction == pytest.approx(10.0)
    bundle = covariance_bundle(o.problem, o.noise_model(), 0.05)
    terms = linfty_bound_terms(bundle, None, 0.05, 10_000, 0.05, oracle=o)
    assert terms.mixing_term == pytest.approx(0.1**-2.5 / (0.05 * 100.0))


def test_linf_zero_noise():
    p = ProblemSpec.from_arrays(np.eye(2), np.ones(2))
    bundle = covariance_bundle(p, DeterministicOracle(p).noise_model(), 0.1)
    terms = linfty_bound_terms(bundle, 1.0, 0.1, 100, 0.05)
    assert terms.sigma2_max == 0.0 and terms.variance_term == 0.0


def test_linf_refined_leading_term():
    o = GaussianOracle(ProblemSpec.from_arrays(np.eye(2), np.zeros(2)), 0.0, np.diag([1.0, 4.0]))
    bundle = covariance_bundle(o.problem, o.noise_model(), 0.01)
    np.testing.assert_allclose(bundle.gamma_eta, np.diag([1.0, 4.0]), atol=1e-12)
    terms = linfty_bound_terms(bundle, 1.0, 0.01, 1000, 0.05)
    assert terms.refined_leading == pytest.approx(q_functional([1.0, 4.0], 0.05))
    assert terms.refined_leading == pytest.approx(grid_q([1.0, 4.0], 0.05), abs=1e-6)
    assert terms.variance_term == pytest.approx(math.sqrt(4.0 * math.log(2 / 0.05)))


def test_linf_needs_certificate():
    p = ProblemSpec.from_arrays(np.eye(1), np.ones(1))
    bundle = covariance_bundle(p, DeterministicOracle(p).noise_model(), 0.1)
    with pytest.raises(ContractNotCertified):
        linfty_bound_terms(bundle, None, 0.1, 100, 0.05, oracle=DeterministicOracle(p))


@pytest.mark.parametrize("k,n", [(0, 10), (7, 10), (1800, 2000), (2000, 2000)])
def test_wilson_matches_statsmodels(k, n):
    lo, hi = wilson_interval(k, n)
    ref = proportion_confint(k, n, alpha=0.05, method="wilson")
    assert lo == pytest.approx(ref[0], abs=1e-12) and hi == pytest.approx(ref[1], abs=1e-12)


def test_coverage_limits():
    o = GaussianOracle.isotropic([[1.0]], [1.0], b_std=1.0)
    cfg = RunConfig(eta=0.05, T=1000, theta0=[1.0], seed=2)
    tab = coverage_study(o.problem, o, cfg, [0.0, 1.0, 10.0, 1e9], 200, delta=0.1)
    assert tab.coverage[0] == 0.0
    assert tab.coverage[-1] == 1.0
    assert np.all(np.diff(tab.coverage) >= 0)
    assert np.all(tab.wilson_lo <= tab.coverage) and np.all(tab.coverage <= tab.wilson_hi)
    assert tab.calibrated_c() is not None
