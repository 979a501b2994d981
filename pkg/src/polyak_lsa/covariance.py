"""Covariance objects of the averaged LSA iterate.

All matrices act on row-major flattenings, so ``vec(A M B^T) = (A kron B) vec(M)``
and the noise second moment ``K`` stored in :class:`NoiseModel` satisfies
``vec(E[Xi M Xi^T]) = K vec(M)``. The stationary covariance solves

    A L + L A^T - eta A L A^T - eta E[Xi L Xi^T] = eta Sigma*,

which becomes one dense ``d^2 x d^2`` linear system.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NotHurwitz, NotPSD, SingularOperator
from .lsa import Record, RunConfig, run
from .oracles import NoiseModel, Oracle, ProblemSpec
from .rng import make_streams
from .spectral import Regime, SpectralInfo, analyze

__all__ = [
    "CovarianceBundle",
    "sigma_star",
    "stationary_operator",
    "solve_stationary_cov",
    "gamma_eta",
    "classical_cov",
    "covariance_bundle",
    "plug_back_residual",
    "stationary_moment_bound",
    "StationaryEstimate",
    "empirical_stationary",
    "empirical_stationary_cov",
    "default_burn_in",
]

RCOND_MIN = 1e-12
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CovarianceBundle:
    sigma_star: np.ndarray
    lambda_eta: np.ndarray
    gamma_eta: np.ndarray
    classical: np.ndarray
    eta: float
    residual: float
    rcond: float

    @property
    def correction(self) -> np.ndarray:
        """``gamma_eta - classical``, the step-size dependent part."""
        return self.gamma_eta - self.classical


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _psd_repair(M: np.ndarray, name: str) -> np.ndarray:
    """Clamp eigenvalues in ``(-PSD_TOL * scale, 0)`` to zero; reject worse."""
    M = _symmetrize(M)
    if not M.size:
        return M
    w, V = np.linalg.eigh(M)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -PSD_TOL * scale:
        raise NotPSD(f"NotPSD: {name} has eigenvalue {w[0]:.3e}")
    if w[0] >= 0.0:
        return M
    return _symmetrize((V * np.maximum(w, 0.0)) @ V.T)


def _require_theta_star(problem: ProblemSpec) -> np.ndarray:
    if problem.theta_star is None:
        raise ValueError("theta_star is required")
    return problem.theta_star


def sigma_star(problem: ProblemSpec, noise: NoiseModel) -> np.ndarray:
    """Covariance of the noise at the solution, ``cov(Xi theta* - xi)``.

    Equals ``cov(xi) + cov(Xi theta*)`` when matrix and vector noise are
    uncorrelated; the cross term is subtracted otherwise.
    """
    th = _require_theta_star(problem)
    C = noise.cross_theta(th)
    return _symmetrize(noise.cov_xi + noise.cov_Xi_theta(th) - C - C.T)


def stationary_operator(A_bar, noise: NoiseModel, eta: float) -> np.ndarray:
    """``A (+) A - eta A kron A - eta K`` acting on row-major ``vec``."""
    A = np.asarray(A_bar, float)
    d = A.shape[0]
    I = np.eye(d)
    return (np.kron(A, I) + np.kron(I, A) - eta * np.kron(A, A)
            - eta * noise.xi_A_second_moment)


def _solve(problem: ProblemSpec, noise: NoiseModel, eta: float, S: np.ndarray):
    info = analyze(problem.A_bar)
    if info.regime is not Regime.HURWITZ:
        raise NotHurwitz(f"NotHurwitz: regime is {info.regime.value}")
    if not eta > 0:
        raise ValueError("eta must be positive")
    d = problem.dimension
    M = stationary_operator(problem.A_bar, noise, eta)
    with warnings.catch_warnings():
        # exact singularity is reported below through rcond
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=True)
    anorm = float(np.max(np.sum(np.abs(M), axis=0)))
    rcond, _ = sla.lapack.dgecon(lu, anorm, norm="1")
    if not rcond > RCOND_MIN:
        raise SingularOperator(
            f"SingularOperator: stationary operator has reciprocal condition {rcond:.2e} "
            f"at eta = {eta:g}; the step is at or beyond the stability threshold")
    L = sla.lu_solve((lu, piv), eta * S.ravel()).reshape(d, d)
    return _symmetrize(L), float(rcond)


def solve_stationary_cov(problem: ProblemSpec, noise: NoiseModel, eta: float) -> np.ndarray:
    """Stationary covariance of the constant step-size iterate chain."""
    L, _ = _solve(problem, noise, eta, sigma_star(problem, noise))
    return _psd_repair(L, "lambda_eta")


def plug_back_residual(problem: ProblemSpec, noise: NoiseModel, eta: float,
                       L: np.ndarray, S: np.ndarray | None = None) -> float:
    """Frobenius norm of the stationary-equation residual at ``L``."""
    A = problem.A_bar
    S = sigma_star(problem, noise) if S is None else S
    R = A @ L + L @ A.T - eta * A @ L @ A.T - eta * noise.apply_A(L) - eta * S
    return float(np.linalg.norm(R))


def classical_cov(problem: ProblemSpec, noise: NoiseModel) -> np.ndarray:
    """``A^{-1} Sigma* A^{-T}``, the vanishing-step limit."""
    Ainv = np.linalg.inv(problem.A_bar)
    return _symmetrize(Ainv @ sigma_star(problem, noise) @ Ainv.T)


def gamma_eta(problem: ProblemSpec, noise: NoiseModel, eta: float) -> np.ndarray:
    """Asymptotic covariance of ``sqrt(T)(theta_bar_T - theta*)`` at step ``eta``."""
    return covariance_bundle(problem, noise, eta).gamma_eta


def covariance_bundle(problem: ProblemSpec, noise: NoiseModel, eta: float) -> CovarianceBundle:
    S = sigma_star(problem, noise)
    L, rcond = _solve(problem, noise, eta, S)
    L = _psd_repair(L, "lambda_eta")
    Ainv = np.linalg.inv(problem.A_bar)
    G = Ainv @ (S + noise.apply_A(L)) @ Ainv.T
    C = Ainv @ S @ Ainv.T
    return CovarianceBundle(
        sigma_star=_psd_repair(S, "sigma_star"),
        lambda_eta=L,
        gamma_eta=_psd_repair(G, "gamma_eta"),
        classical=_psd_repair(C, "classical"),
        eta=float(eta),
        residual=plug_back_residual(problem, noise, eta, L, S),
        rcond=rcond,
    )


def stationary_moment_bound(problem: ProblemSpec, noise: NoiseModel, eta: float,
                            info: SpectralInfo | None = None) -> float:
    """``kappa^2 (eta / lam*) (v_A^2 |theta*|^2 + v_b^2 d)``; bounds ``trace(Lambda)``."""
    info = analyze(problem.A_bar) if info is None else info
    if info.regime is not Regime.HURWITZ:
        raise NotHurwitz(f"NotHurwitz: regime is {info.regime.value}")
    th = _require_theta_star(problem)
    return (info.condition_number**2 * eta / info.spectral_gap
            * (noise.v_A2 * float(th @ th) + noise.v_b2 * problem.dimension))


def default_burn_in(problem: ProblemSpec, eta: float, tol: float = 1e-8) -> int:
    """``ceil(2 / (eta lam*)) * log(1 / tol)`` steps."""
    info = analyze(problem.A_bar)
    if info.regime is not Regime.HURWITZ:
        raise NotHurwitz(f"NotHurwitz: regime is {info.regime.value}")
    return int(math.ceil(2.0 / (eta * info.spectral_gap)) * math.log(1.0 / tol))


@dataclass(frozen=True, eq=False)
class StationaryEstimate:
    cov: np.ndarray
    cov_stderr: np.ndarray
    mean: np.ndarray
    mean_stderr: np.ndarray
    burn_in: int
    n_samples: int
    n_batches: int


def empirical_stationary(problem: ProblemSpec, oracle: Oracle, eta: float,
                         burn_in: int | None = None, n_samples: int = 1_000_000,
                         seed: int = 0, n_batches: int = 50,
                         backend: str | None = None) -> StationaryEstimate:
    """Time-averaged moments of one long chain after burn-in.

    Standard errors come from batch means over ``n_batches`` contiguous
    blocks, which absorbs the chain's autocorrelation when each block is
    much longer than the mixing time.
    """
    burn_in = default_burn_in(problem, eta) if burn_in is None else int(burn_in)
    theta0 = problem.theta_star if problem.theta_star is not None else None
    cfg = RunConfig(eta=eta, T=burn_in + n_samples, theta0=theta0, seed=seed,
                    record=Record("full"), backend=backend)
    traj = run(problem, oracle, cfg, make_streams(seed, 0))
    X = traj.iterates[burn_in:burn_in + n_samples]
    mean = X.mean(axis=0)
    Z = X - mean
    cov = _symmetrize(Z.T @ Z / n_samples)
    size = n_samples // n_batches
    blocks = Z[: size * n_batches].reshape(n_batches, size, -1)
    bcov = np.einsum("bni,bnj->bij", blocks, blocks) / size
    bmean = blocks.mean(axis=1) + mean
    return StationaryEstimate(
        cov=cov,
        cov_stderr=bcov.std(axis=0, ddof=1) / math.sqrt(n_batches),
        mean=mean,
        mean_stderr=bmean.std(axis=0, ddof=1) / math.sqrt(n_batches),
        burn_in=burn_in,
        n_samples=n_samples,
        n_batches=n_batches,
    )


def empirical_stationary_cov(problem: ProblemSpec, oracle: Oracle, eta: float,
                             burn_in: int | None = None, n_samples: int = 1_000_000,
                             seed: int = 0) -> np.ndarray:
    return empirical_stationary(problem, oracle, eta, burn_in, n_samples, seed).cov
