"""Stochastic observation models.

An oracle produces i.i.d. pairs ``(A_t, b_t)`` with ``E[A_t] = A_bar`` and
``E[b_t] = b_bar``. Samples are drawn in batches from a
:class:`~polyak_lsa.rng.Streams` pair: the matrix noise always comes from
``streams.a`` and the vector noise from ``streams.b``, which makes the two
independent for every oracle whose construction allows it.

Second-moment descriptors live in :class:`NoiseModel`. The fourth-order
tensor ``E[Xi (x) Xi]`` is stored as a ``d^2 x d^2`` matrix ``K`` acting on
row-major flattened matrices, so ``E[Xi M Xi^T] = (K @ M.ravel()).reshape(d, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NonErgodic, NotConvexConcave
from .rng import Streams

__all__ = [
    "ProblemSpec",
    "OracleSample",
    "NoiseModel",
    "MrpSpec",
    "Oracle",
    "DeterministicOracle",
    "GaussianOracle",
    "RegressionOracle",
    "MomentumOracle",
    "ExactTDOracle",
    "LinearTDOracle",
    "CounterexampleOracle",
    "lift_momentum",
    "td_linear_fa_oracle",
    "minimax_oracle",
    "counterexample_oracle",
    "estimate_noise_model",
    "fit_tail",
]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """The deterministic system ``A_bar theta = b_bar``."""

    A_bar: np.ndarray
    b_bar: np.ndarray
    theta_star: np.ndarray | None = None

    @classmethod
    def from_arrays(cls, A, b, theta_star=None) -> "ProblemSpec":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape != (b.size, b.size):
            raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
        if theta_star is None:
            if np.linalg.cond(A) < 1e12:
                theta_star = np.linalg.solve(A, b)
        else:
            theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
        return cls(A, b, theta_star)

    @property
    def dimension(self) -> int:
        return int(self.b_bar.size)

    def residual(self, theta) -> np.ndarray:
        return self.A_bar @ theta - self.b_bar


@dataclass(frozen=True, eq=False)
class OracleSample:
    A_t: np.ndarray
    b_t: np.ndarray


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Second moments and tail parameters of ``Xi = A_t - A_bar``, ``xi = b_t - b_bar``.

    ``cross[i, j, k] = E[Xi_ij xi_k]`` is zero for oracles whose matrix and
    vector noise are independent; the regression and function-approximation
    oracles are the exceptions.
    """

    cov_xi: np.ndarray
    xi_A_second_moment: np.ndarray
    cross: np.ndarray
    v_A2: float
    v_b2: float
    sigma_A: float
    sigma_b: float
    alpha: float
    beta: float
    source: str = "Analytic"
    n_samples: int | None = None

    @property
    def dimension(self) -> int:
        return int(self.cov_xi.shape[0])

    def apply_A(self, M) -> np.ndarray:
        """``E[Xi M Xi^T]``."""
        d = self.dimension
        M = np.asarray(M, dtype=float)
        return (self.xi_A_second_moment @ M.ravel()).reshape(d, d)

    def cov_Xi_theta(self, theta) -> np.ndarray:
        """``cov(Xi theta)``."""
        theta = np.asarray(theta, dtype=float)
        return self.apply_A(np.outer(theta, theta))

    def cross_theta(self, theta) -> np.ndarray:
        """``E[(Xi theta) xi^T]``."""
        return np.einsum("ijk,j->ik", self.cross, np.asarray(theta, dtype=float))

    @classmethod
    def zero(cls, d: int) -> "NoiseModel":
        return cls(np.zeros((d, d)), np.zeros((d * d, d * d)), np.zeros((d, d, d)),
                   0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def _K_from_tensor(K4: np.ndarray) -> np.ndarray:
    """``K4[i, j, k, l] = E[Xi_ij Xi_kl]`` -> Kronecker layout ``[(i,k), (j,l)]``."""
    d = K4.shape[0]
    return np.ascontiguousarray(K4.transpose(0, 2, 1, 3)).reshape(d * d, d * d)


def _v_A2(K: np.ndarray) -> float:
    """``sup_u E|Xi u|^2 = lambda_max(E[Xi^T Xi])``."""
    d = int(round(math.sqrt(K.shape[0])))
    K4 = K.reshape(d, d, d, d)  # [i, k, j, l]
    M = np.einsum("iijl->jl", K4)
    M = 0.5 * (M + M.T)
    return float(max(0.0, np.linalg.eigvalsh(M)[-1])) if d else 0.0


def _lam_max(S: np.ndarray) -> float:
    S = 0.5 * (S + S.T)
    return float(max(0.0, np.linalg.eigvalsh(S)[-1]))


class Oracle:
    """Base class. Subclasses set ``problem`` and implement ``sample_batch``."""

    problem: ProblemSpec
    #: l-infinity contraction constant lambda_bar, when the oracle certifies it
    linf_contraction: float | None = None

    @property
    def dimension(self) -> int:
        return self.problem.dimension

    def sample_batch(self, streams: Streams, n: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def sample(self, streams: Streams) -> OracleSample:
        A, b = self.sample_batch(streams, 1)
        return OracleSample(A[0], b[0])

    def noise_model(self) -> NoiseModel | None:
        """Closed-form noise descriptors, or None when only Monte Carlo applies."""
        return None

    def certify_batch(self, A: np.ndarray, b: np.ndarray) -> int:
        """Count samples violating the l-infinity certificates (0 when none apply)."""
        return 0

    @property
    def is_deterministic(self) -> bool:
        return False


@dataclass(frozen=True, eq=False)
class DeterministicOracle(Oracle):
    problem: ProblemSpec

    def sample_batch(self, streams, n):
        A = np.broadcast_to(self.problem.A_bar, (n,) + self.problem.A_bar.shape).copy()
        b = np.broadcast_to(self.problem.b_bar, (n,) + self.problem.b_bar.shape).copy()
        return A, b

    def noise_model(self):
        return NoiseModel.zero(self.dimension)

    @property
    def is_deterministic(self):
        return True


@dataclass(frozen=True, eq=False)
class GaussianOracle(Oracle):
    """``A_t = A_bar + a_std * G``, ``b_t = b_bar + L z`` with ``L L^T = b_cov``."""

    problem: ProblemSpec
    a_std: float = 0.0
    b_cov: np.ndarray | None = None

    def __post_init__(self):
        d = self.problem.dimension
        cov = np.zeros((d, d)) if self.b_cov is None else np.atleast_2d(np.asarray(self.b_cov, float))
        object.__setattr__(self, "b_cov", cov)
        w, V = np.linalg.eigh(0.5 * (cov + cov.T))
        if w.size and w[0] < -1e-10 * max(1.0, abs(w[-1])):
            raise ValueError("b_cov must be positive semidefinite")
        object.__setattr__(self, "_b_factor", V * np.sqrt(np.clip(w, 0.0, None)))

    @classmethod
    def isotropic(cls, A_bar, b_bar, a_std=0.0, b_std=0.0):
        problem = ProblemSpec.from_arrays(A_bar, b_bar)
        d = problem.dimension
        return cls(problem, float(a_std), (float(b_std) ** 2) * np.eye(d))

    def sample_batch(self, streams, n):
        d = self.dimension
        A = np.broadcast_to(self.problem.A_bar, (n, d, d)).copy()
        if self.a_std > 0:
            A += self.a_std * streams.a.standard_normal((n, d, d))
        b = np.broadcast_to(self.problem.b_bar, (n, d)).copy()
        if np.any(self.b_cov):
            b += streams.b.standard_normal((n, d)) @ self._b_factor.T
        return A, b

    def noise_model(self):
        d = self.dimension
        s2 = self.a_std**2
        # E[Xi M Xi^T] = s^2 tr(M) I
        vec_I = np.eye(d).ravel()
        K = s2 * np.outer(vec_I, vec_I)
        v_b2 = _lam_max(self.b_cov)
        return NoiseModel(
            cov_xi=self.b_cov.copy(),
            xi_A_second_moment=K,
            cross=np.zeros((d, d, d)),
            v_A2=s2 * d,
            v_b2=v_b2,
            sigma_A=self.a_std * math.sqrt(2 * d),
            sigma_b=math.sqrt(v_b2),
            alpha=0.5 if self.a_std > 0 else 0.0,
            beta=0.5 if v_b2 > 0 else 0.0,
        )

    @property
    def is_deterministic(self):
        return self.a_std == 0 and not np.any(self.b_cov)


@dataclass(frozen=True, eq=False)
class RegressionOracle(Oracle):
    """Least-squares SGD: ``X ~ N(0, x_cov)``, ``Y = <X, theta*> + eps``,
    ``A_t = X X^T``, ``b_t = X Y``."""

    theta: np.ndarray
    noise_std: float = 1.0
    x_cov: np.ndarray | None = None

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, float))
        d = theta.size
        cov = np.eye(d) if self.x_cov is None else np.atleast_2d(np.asarray(self.x_cov, float))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "x_cov", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))
        object.__setattr__(self, "problem", ProblemSpec(cov.copy(), cov @ theta, theta.copy()))

    def sample_batch(self, streams, n):
        d = self.dimension
        X = streams.a.standard_normal((n, d)) @ self._chol.T
        eps = self.noise_std * streams.b.standard_normal(n)
        Y = X @ self.theta + eps
        return np.einsum("ni,nj->nij", X, X), X * Y[:, None]

    def noise_model(self):
        S, th, s2 = self.x_cov, self.theta, self.noise_std**2
        St = S @ th
        K4 = np.einsum("ik,jl->ijkl", S, S) + np.einsum("il,jk->ijkl", S, S)
        cov_xi = np.outer(St, St) + (th @ St + s2) * S
        cross = np.einsum("ik,j->ijk", S, St) + np.einsum("jk,i->ijk", S, St)
        K = _K_from_tensor(K4)
        return NoiseModel(
            cov_xi=cov_xi,
            xi_A_second_moment=K,
            cross=cross,
            v_A2=_v_A2(K),
            v_b2=_lam_max(cov_xi),
            sigma_A=float("nan"),
            sigma_b=float("nan"),
            alpha=1.0,
            beta=1.0,
        )


@dataclass(frozen=True, eq=False)
class MomentumOracle(Oracle):
    """Heavy-ball SGD written as LSA on the stacked state ``[theta, v]``."""

    base: Oracle
    alpha: float
    eta: float

    def __post_init__(self):
        if self.alpha <= 0 or self.eta <= 0:
            raise ValueError("momentum alpha and eta must be positive")
        A = self.base.problem.A_bar
        b = self.base.problem.b_bar
        ts = self.base.problem.theta_star
        lifted_star = None if ts is None else np.concatenate([ts, np.zeros_like(ts)])
        object.__setattr__(
            self, "problem", ProblemSpec(self._lift_A(A), self._lift_b(b), lifted_star)
        )

    def _lift_A(self, A):
        d = A.shape[-1]
        top = np.concatenate([np.zeros_like(A), np.broadcast_to(np.eye(d), A.shape)], axis=-1)
        bottom = np.concatenate([-A, self.alpha * np.eye(d) + self.eta * A], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    def _lift_b(self, b):
        return np.concatenate([np.zeros_like(b), -b], axis=-1)

    def sample_batch(self, streams, n):
        A, b = self.base.sample_batch(streams, n)
        return self._lift_A(A), self._lift_b(b)

    def noise_model(self):
        base = self.base.noise_model()
        if base is None:
            return None
        d = self.base.dimension
        # Xi~ = S Xi R with S = [0; I], R = [-I, eta I]; xi~ = -S xi.
        S = np.vstack([np.zeros((d, d)), np.eye(d)])
        R = np.hstack([-np.eye(d), self.eta * np.eye(d)])
        K = np.kron(S, S) @ base.xi_A_second_moment @ np.kron(R, R)
        cov = S @ base.cov_xi @ S.T
        cross = -np.einsum("ai,jb,ck,ijk->abc", S, R, S, base.cross)
        scale = math.sqrt(1.0 + self.eta**2)
        return NoiseModel(
            cov_xi=cov,
            xi_A_second_moment=K,
            cross=cross,
            v_A2=_v_A2(K),
            v_b2=_lam_max(cov),
            sigma_A=scale * base.sigma_A,
            sigma_b=base.sigma_b,
            alpha=base.alpha,
            beta=base.beta,
            source=base.source,
            n_samples=base.n_samples,
        )

    @property
    def is_deterministic(self):
        return self.base.is_deterministic


def lift_momentum(base_oracle: Oracle, alpha_momentum: float, eta: float) -> MomentumOracle:
    return MomentumOracle(base_oracle, float(alpha_momentum), float(eta))


# ---------------------------------------------------------------- TD oracles


@dataclass(frozen=True, eq=False)
class MrpSpec:
    transition_P: np.ndarray
    reward_r: np.ndarray
    discount_gamma: float

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.transition_P, float))
        r = np.atleast_1d(np.asarray(self.reward_r, float))
        object.__setattr__(self, "transition_P", P)
        object.__setattr__(self, "reward_r", r)
        if P.shape != (r.size, r.size):
            raise ValueError(f"P has shape {P.shape} but r has {r.size} entries")
        if np.any(P < 0) or np.any(P > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("rows of P must sum to 1")
        if np.any(np.abs(r) > 1):
            raise ValueError("rewards must lie in [-1, 1]")
        if not 0.0 <= self.discount_gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @property
    def n_states(self) -> int:
        return int(self.reward_r.size)

    def stationary(self) -> np.ndarray:
        """Unique stationary law, from the left eigenvector of eigenvalue 1."""
        w, V = np.linalg.eig(self.transition_P.T)
        ones = np.flatnonzero(np.abs(w - 1.0) < 1e-8)
        if ones.size != 1:
            raise NonErgodic(
                f"NonErgodic: eigenvalue 1 has multiplicity {ones.size}; stationary law not unique"
            )
        mu = np.real(V[:, ones[0]])
        mu = mu / mu.sum()
        return np.clip(mu, 0.0, None) / np.clip(mu, 0.0, None).sum()

    def reward_noise_halfwidth(self) -> np.ndarray:
        return 1.0 - np.abs(self.reward_r)

    def value_function(self) -> np.ndarray:
        D = self.n_states
        return np.linalg.solve(np.eye(D) - self.discount_gamma * self.transition_P, self.reward_r)

    @classmethod
    def random(cls, n_states: int, gamma: float, rng: np.random.Generator) -> "MrpSpec":
        P = rng.dirichlet(np.ones(n_states), size=n_states)
        P /= P.sum(axis=1, keepdims=True)
        return cls(P, rng.uniform(-1, 1, n_states), gamma)

    @classmethod
    def cycle(cls, n_states: int, gamma: float, reward=None) -> "MrpSpec":
        P = np.roll(np.eye(n_states), 1, axis=1)
        r = np.zeros(n_states) if reward is None else reward
        return cls(P, r, gamma)


def _draw_next(cumP: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of a next state for every (sample, row) in ``u``."""
    J = (u[..., None] >= cumP).sum(axis=-1)
    return np.minimum(J, cumP.shape[-1] - 1)


def _rewards(mrp: MrpSpec, rng, shape) -> np.ndarray:
    h = mrp.reward_noise_halfwidth()
    return mrp.reward_r + h * rng.uniform(-1.0, 1.0, shape)


@dataclass(frozen=True, eq=False)
class ExactTDOracle(Oracle):
    """Generative-model TD(0): ``A_t = I - gamma Z_t``, ``b_t = R_t``.

    With ``center_rewards`` the long-run average reward is subtracted from
    every reward so the undiscounted system is consistent.
    """

    mrp: MrpSpec
    center_rewards: bool = False

    def __post_init__(self):
        P, r, g = self.mrp.transition_P, self.mrp.reward_r, self.mrp.discount_gamma
        D = r.size
        A = np.eye(D) - g * P
        offset = float(self.mrp.stationary() @ r) if self.center_rewards else 0.0
        b = r - offset
        ts = np.linalg.lstsq(A, b, rcond=None)[0] if g == 1.0 else np.linalg.solve(A, b)
        object.__setattr__(self, "_offset", offset)
        object.__setattr__(self, "_cumP", np.cumsum(P, axis=1))
        object.__setattr__(self, "problem", ProblemSpec(A, b, ts))
        object.__setattr__(self, "linf_contraction", 1.0 - g if g < 1 else None)

    def sample_batch(self, streams, n):
        D = self.mrp.n_states
        g = self.mrp.discount_gamma
        J = _draw_next(self._cumP, streams.a.random((n, D)))
        A = np.broadcast_to(np.eye(D), (n, D, D)).copy()
        rows = np.arange(D)
        A[np.arange(n)[:, None], rows[None, :], J] -= g
        b = _rewards(self.mrp, streams.b, (n, D)) - self._offset
        return A, b

    def noise_model(self):
        P, g = self.mrp.transition_P, self.mrp.discount_gamma
        D = P.shape[0]
        row_cov = np.einsum("ij,jl->ijl", P, np.eye(D)) - np.einsum("ij,il->ijl", P, P)
        K4 = g**2 * np.einsum("ik,ijl->ijkl", np.eye(D), row_cov)
        K = _K_from_tensor(K4)
        h = self.mrp.reward_noise_halfwidth()
        cov_xi = np.diag(h**2 / 3.0)
        return NoiseModel(
            cov_xi=cov_xi,
            xi_A_second_moment=K,
            cross=np.zeros((D, D, D)),
            v_A2=_v_A2(K),
            v_b2=_lam_max(cov_xi),
            sigma_A=g * math.sqrt(2 * D),
            sigma_b=float(np.linalg.norm(h)),
            alpha=0.5,
            beta=0.5,
        )

    def certify_batch(self, A, b):
        """Structural certificates, checked exactly per sample.

        Each ``I - A_t = gamma Z_t`` must have exactly one entry per row
        equal to gamma (so its l-inf operator norm is gamma), and
        ``|b_t|_inf <= 1``.
        """
        g = self.mrp.discount_gamma
        D = self.mrp.n_states
        Z = np.eye(D) - A
        bad = np.zeros(A.shape[0], dtype=bool)
        if g > 0:
            hits = np.isclose(Z, g, rtol=0, atol=1e-12)
            zeros = np.isclose(Z, 0.0, rtol=0, atol=1e-12)
            bad |= ~np.all(hits.sum(axis=2) == 1, axis=1)
            bad |= ~np.all(hits | zeros, axis=(1, 2))
        if self.linf_contraction is not None:
            bad |= np.abs(Z).sum(axis=2).max(axis=1) > 1.0 - self.linf_contraction + 1e-12
        bad |= np.abs(b + self._offset).max(axis=1) > 1.0 + 1e-12
        return int(bad.sum())


@dataclass(frozen=True, eq=False)
class LinearTDOracle(Oracle):
    """TD(0) with linear features under stationary sampling ``X ~ mu``."""

    mrp: MrpSpec
    features: np.ndarray

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.features, float))
        object.__setattr__(self, "features", Phi)
        if Phi.shape[0] != self.mrp.n_states:
            raise ValueError("features must have one row per state")
        mu = self.mrp.stationary()
        M = Phi.T @ (mu[:, None] * Phi)
        if np.linalg.matrix_rank(M) < Phi.shape[1]:
            raise ValueError("features are not full column rank under the stationary law")
        g = self.mrp.discount_gamma
        P = self.mrp.transition_P
        A = M - g * Phi.T @ (mu[:, None] * (P @ Phi))
        b = Phi.T @ (mu * self.mrp.reward_r)
        object.__setattr__(self, "_mu", mu)
        object.__setattr__(self, "_cum_mu", np.cumsum(mu))
        object.__setattr__(self, "_cumP", np.cumsum(P, axis=1))
        object.__setattr__(self, "problem", ProblemSpec.from_arrays(A, b))

    @property
    def stationary(self) -> np.ndarray:
        return self._mu

    @property
    def feature_cov(self) -> np.ndarray:
        Phi = self.features
        return Phi.T @ (self._mu[:, None] * Phi)

    def sample_batch(self, streams, n):
        g = self.mrp.discount_gamma
        X = np.minimum(np.searchsorted(self._cum_mu, streams.a.random(n), side="right"),
                       self.mrp.n_states - 1)
        Xp = _draw_next(self._cumP[X], streams.a.random(n))
        R = self.mrp.reward_r[X] + self.mrp.reward_noise_halfwidth()[X] * streams.b.uniform(-1, 1, n)
        phi, phip = self.features[X], self.features[Xp]
        A = np.einsum("ni,nj->nij", phi, phi) - g * np.einsum("ni,nj->nij", phi, phip)
        return A, R[:, None] * phi

    def noise_model(self):
        """Exact moments by enumerating the finite (X, X+) support."""
        Phi, P, g = self.features, self.mrp.transition_P, self.mrp.discount_gamma
        mu, r = self._mu, self.mrp.reward_r
        h = self.mrp.reward_noise_halfwidth()
        A_bar, b_bar = self.problem.A_bar, self.problem.b_bar
        d = Phi.shape[1]
        K4 = np.zeros((d, d, d, d))
        cross = np.zeros((d, d, d))
        cov_xi = np.zeros((d, d))
        for x in range(P.shape[0]):
            if mu[x] == 0:
                continue
            er2 = r[x] ** 2 + h[x] ** 2 / 3.0
            cov_xi += mu[x] * er2 * np.outer(Phi[x], Phi[x])
            xi_mean = r[x] * Phi[x] - b_bar
            for y in np.flatnonzero(P[x]):
                w = mu[x] * P[x, y]
                Xi = np.outer(Phi[x], Phi[x]) - g * np.outer(Phi[x], Phi[y]) - A_bar
                K4 += w * np.einsum("ij,kl->ijkl", Xi, Xi)
                cross += w * np.einsum("ij,k->ijk", Xi, xi_mean)
        cov_xi -= np.outer(b_bar, b_bar)
        K = _K_from_tensor(K4)
        return NoiseModel(
            cov_xi=0.5 * (cov_xi + cov_xi.T),
            xi_A_second_moment=K,
            cross=cross,
            v_A2=_v_A2(K),
            v_b2=_lam_max(cov_xi),
            sigma_A=float("nan"),
            sigma_b=float("nan"),
            alpha=0.5,
            beta=0.5,
        )


def td_linear_fa_oracle(chain: MrpSpec, features) -> LinearTDOracle:
    return LinearTDOracle(chain, np.asarray(features, float))


def minimax_oracle(payoff_P, c_x, c_y, noise_std: float = 0.0, tol: float = 1e-10) -> GaussianOracle:
    """Saddle-point system of a convex-concave quadratic game."""
    c_x = np.atleast_1d(np.asarray(c_x, float))
    c_y = np.atleast_1d(np.asarray(c_y, float))
    n, m = c_x.size, c_y.size
    P = np.atleast_2d(np.asarray(payoff_P, float))
    if P.shape != (n + m, n + m):
        raise ValueError(f"payoff matrix must be {(n + m, n + m)}, got {P.shape}")
    Pxx, Pxy, Pyy = P[:n, :n], P[:n, n:], P[n:, n:]
    if n and np.linalg.eigvalsh(0.5 * (Pxx + Pxx.T))[0] < -tol:
        raise NotConvexConcave("NotConvexConcave: P_xx is not positive semidefinite")
    if m and np.linalg.eigvalsh(0.5 * (Pyy + Pyy.T))[-1] > tol:
        raise NotConvexConcave("NotConvexConcave: P_yy is not negative semidefinite")
    A = np.block([[Pxx, Pxy], [-Pxy.T, -Pyy]])
    b = np.concatenate([-c_x, c_y])
    return GaussianOracle.isotropic(A, b, a_std=noise_std, b_std=noise_std)


@dataclass(frozen=True, eq=False)
class CounterexampleOracle(DeterministicOracle):
    """Real embedding of ``-i I_d - J_d`` (nilpotent shift ``J_d``)."""

    complex_dim: int = 2

    @property
    def theta0(self) -> np.ndarray:
        d = self.complex_dim
        x = np.zeros(2 * d)
        x[d - 1] = 1.0
        return x


def counterexample_oracle(d: int) -> CounterexampleOracle:
    if d < 2:
        raise ValueError("need d >= 2")
    C = -1j * np.eye(d) - np.eye(d, k=1)
    A = np.block([[C.real, -C.imag], [C.imag, C.real]])
    problem = ProblemSpec(A, np.zeros(2 * d), np.zeros(2 * d))
    return CounterexampleOracle(problem, complex_dim=d)


# ------------------------------------------------------- Monte Carlo moments

_TAIL_ORDERS = (2.0, 3.0, 4.0, 6.0, 8.0)


def fit_tail(norms: np.ndarray, orders=_TAIL_ORDERS, exponent: float | None = None):
    """Fit ``(E|X|^p)^{1/p} <= p^exponent * sigma`` over the given orders.

    ``norms`` has shape (n_samples, n_directions). Returns (sigma, exponent);
    the exponent is fitted by least squares on log-moments unless given,
    and sigma is then the smallest value that makes the bound hold at
    every fitted order.
    """
    p = np.asarray(orders, float)
    mom = np.array([np.max(np.mean(norms**q, axis=0) ** (1.0 / q)) for q in p])
    if not np.all(mom > 0):
        return 0.0, 0.0 if exponent is None else exponent
    if exponent is None:
        slope = np.polyfit(np.log(p), np.log(mom), 1)[0]
        exponent = float(np.clip(slope, 0.0, 2.0))
    return float(np.max(mom / p**exponent)), float(exponent)


def estimate_noise_model(oracle: Oracle, n_samples: int, streams: Streams,
                         n_directions: int = 100, chunk: int = 20000) -> NoiseModel:
    """Monte Carlo second moments (and tail fit) of the oracle noise."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    d = oracle.dimension
    if oracle.is_deterministic:
        return replace(NoiseModel.zero(d), source="MonteCarlo", n_samples=n_samples)
    A_bar, b_bar = oracle.problem.A_bar, oracle.problem.b_bar
    K4 = np.zeros((d, d, d, d))
    cross = np.zeros((d, d, d))
    cov = np.zeros((d, d))
    dirs = streams.a.standard_normal((d, n_directions))
    dirs /= np.linalg.norm(dirs, axis=0)
    a_norms, b_norms = [], []
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        A, b = oracle.sample_batch(streams, n)
        Xi = A - A_bar
        xi = b - b_bar
        K4 += np.einsum("nij,nkl->ijkl", Xi, Xi)
        cross += np.einsum("nij,nk->ijk", Xi, xi)
        cov += xi.T @ xi
        a_norms.append(np.linalg.norm(Xi @ dirs, axis=1))
        b_norms.append(np.abs(xi @ dirs))
        done += n
    K4 /= n_samples
    cross /= n_samples
    cov = cov / n_samples
    K = _K_from_tensor(K4)
    sigma_A, alpha = fit_tail(np.concatenate(a_norms))
    sigma_b, beta = fit_tail(np.concatenate(b_norms))
    return NoiseModel(
        cov_xi=0.5 * (cov + cov.T),
        xi_A_second_moment=K,
        cross=cross,
        v_A2=_v_A2(K),
        v_b2=_lam_max(cov),
        sigma_A=sigma_A,
        sigma_b=sigma_b,
        alpha=alpha,
        beta=beta,
        source="MonteCarlo",
        n_samples=n_samples,
    )


def noise_model_for(oracle: Oracle, streams: Streams | None = None,
                    n_samples: int = 200_000) -> NoiseModel:
    """Analytic noise model when available, else a Monte Carlo estimate.

    Analytic models with unknown tail constants (NaN sigma) get those
    filled by a Monte Carlo fit at the model's stated exponents.
    """
    nm = oracle.noise_model()
    if nm is None:
        if streams is None:
            raise ValueError("oracle has no analytic noise model; pass streams")
        return estimate_noise_model(oracle, n_samples, streams)
    if math.isnan(nm.sigma_A) or math.isnan(nm.sigma_b):
        if streams is None:
            return nm
        mc = _tail_only(oracle, streams, min(n_samples, 50_000), nm.alpha, nm.beta)
        nm = replace(nm, sigma_A=mc[0], sigma_b=mc[1])
    return nm


def _tail_only(oracle, streams, n, alpha, beta):
    d = oracle.dimension
    A, b = oracle.sample_batch(streams, n)
    dirs = streams.a.standard_normal((d, 100))
    dirs /= np.linalg.norm(dirs, axis=0)
    sA, _ = fit_tail(np.linalg.norm((A - oracle.problem.A_bar) @ dirs, axis=1), exponent=alpha)
    sb, _ = fit_tail(np.abs((b - oracle.problem.b_bar) @ dirs), exponent=beta)
    return sA, sb
