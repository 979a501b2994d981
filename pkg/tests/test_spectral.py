import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hurwitz
from polyak_lsa.errors import Defective, NotHurwitz
from polyak_lsa.spectral import (
    Regime,
    analyze,
    critical_step_size,
    hurwitz_step_bound,
    stability_threshold,
    toeplitz_block,
    toeplitz_eigenvalues,
)


def test_identity():
    info = analyze(np.eye(2))
    np.testing.assert_allclose(info.eigenvalues, [1.0, 1.0])
    assert info.spectral_gap == pytest.approx(1.0)
    assert info.spectral_radius == pytest.approx(1.0)
    assert info.condition_number == pytest.approx(1.0)
    assert info.regime is Regime.HURWITZ


def test_rotation_is_critical_and_diagonalizable():
    info = analyze([[0.0, 1.0], [-1.0, 0.0]])
    ev = info.eigenvalues[np.argsort(info.eigenvalues.imag)]
    np.testing.assert_allclose(ev, [-1j, 1j], atol=1e-12)
    assert info.spectral_gap == pytest.approx(0.0, abs=1e-12)
    assert info.spectral_radius == pytest.approx(1.0)
    assert info.regime is Regime.CRITICAL
    assert info.diagonalizable


def test_unstable():
    assert analyze([[-1.0, 0.0], [0.0, 2.0]]).regime is Regime.UNSTABLE


def test_jordan_block_not_diagonalizable():
    info = analyze([[1.0, 1.0], [0.0, 1.0]])
    assert not info.diagonalizable
    assert info.regime is Regime.HURWITZ
    # a Jordan block still reconstructs and keeps a positive Hermitian part
    np.testing.assert_allclose(info.reconstruct(), [[1.0, 1.0], [0.0, 1.0]], atol=1e-10)
    assert info.hermitian_part_min() >= info.spectral_gap - 1e-8


def test_toeplitz_single_block():
    np.testing.assert_allclose(toeplitz_eigenvalues(1), [4.0])
    np.testing.assert_allclose(np.linalg.eigvalsh(toeplitz_block(1)), [4.0])


@pytest.mark.parametrize("k", [2, 3, 5, 8])
def test_toeplitz_formula_matches_eigvalsh(k):
    np.testing.assert_allclose(np.linalg.eigvalsh(toeplitz_block(k)), toeplitz_eigenvalues(k),
                               atol=1e-12)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_invariants_on_random_matrices(d, seed):
    A = np.random.default_rng(seed).standard_normal((d, d))
    info = analyze(A)
    err = np.linalg.norm(A - info.reconstruct()) / max(np.linalg.norm(A), 1e-300)
    assert err <= 1e-10
    assert info.condition_number >= 1.0 - 1e-12
    assert (info.regime is Regime.HURWITZ) == (info.spectral_gap > 0)
    if info.regime is Regime.HURWITZ:
        assert info.hermitian_part_min() >= info.spectral_gap - 1e-8


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_hurwitz_part_on_random_stable(d, seed):
    info = analyze(random_hurwitz(np.random.default_rng(seed), d))
    assert info.regime is Regime.HURWITZ
    assert info.hermitian_part_min() >= info.spectral_gap - 1e-8


def _info(gap, radius, kappa):
    info = analyze(np.eye(1))
    # substitute the three scalars the step-size rules consume
    return type(info)(info.eigenvalues, info.similarity_U, info.diagonal_D, gap, radius, kappa,
                      Regime.HURWITZ, True)


def test_step_bound_noiseless():
    assert hurwitz_step_bound(_info(1.0, 1.0, 1.0), 0.0, 0.0, 100, 0.1) == pytest.approx(1.0)


def test_step_bound_with_matrix_noise():
    T, delta = math.e * 0.5, 0.5
    assert hurwitz_step_bound(_info(1.0, 1.0, 1.0), 1.0, 0.0, T, delta) == pytest.approx(0.5)


def test_step_bound_scaled():
    assert hurwitz_step_bound(_info(0.5, 2.0, 1.0), 0.0, 0.0, 10, 0.1) == pytest.approx(0.125)


def test_step_bound_rejects_critical():
    with pytest.raises(NotHurwitz):
        hurwitz_step_bound(analyze([[0.0, 1.0], [-1.0, 0.0]]), 0.0, 0.0, 10, 0.1)


@pytest.mark.parametrize("rho,kappa,vA,T,expected", [
    (1.0, 1.0, 0.0, 100, 0.1),
    (1.0, 1.0, 1.0, 16, 1 / 16),
    (2.0, 2.0, 0.5, 25, 1 / 25),
])
def test_critical_step_size(rho, kappa, vA, T, expected):
    assert critical_step_size(_info(0.0, rho, kappa), vA, T) == pytest.approx(expected)


def test_critical_step_size_rejects_defective():
    with pytest.raises(Defective):
        critical_step_size(analyze([[0.0, 1.0], [0.0, 0.0]]), 0.0, 10)


def test_stability_threshold():
    assert stability_threshold(_info(1.0, 1.0, 1.0), 1.0) == pytest.approx(0.5)
