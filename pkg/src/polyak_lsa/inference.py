"""Finite-sample deviation terms and confidence sets for the averaged iterate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .covariance import CovarianceBundle, covariance_bundle
from .errors import ContractNotCertified, NotHurwitz
from .lsa import RunConfig, run_replicates
from .oracles import NoiseModel, Oracle, ProblemSpec, noise_model_for
from .rng import make_streams
from .spectral import Regime, SpectralInfo, analyze

__all__ = [
    "DeviationTerms",
    "deviation_terms",
    "ConfidenceEllipse",
    "ellipse",
    "q_functional",
    "LinfBoundTerms",
    "linfty_bound_terms",
    "CoverageTable",
    "coverage_study",
    "wilson_interval",
]


@dataclass(frozen=True)
class DeviationTerms:
    V_theta: float
    Delta: float
    T: int
    delta: float
    eta: float
    tail: tuple[float, float, float, float]


def deviation_terms(problem: ProblemSpec, spectral: SpectralInfo, noise: NoiseModel,
                    theta0, eta: float, T: int, delta: float) -> DeviationTerms:
    """Prefactor ``V(theta*)`` and the deviation term ``Delta(T, delta)``.

    ``V = kappa^2 / min|lam| * (|theta* - theta0| + |theta*|
    + sqrt(eta / lam*) (sigma_A |theta*| + sigma_b sqrt(d)))`` and
    ``Delta = V ((sigma_A + sigma_b) T^{-1/4} + (1 + sqrt(sigma_A / lam*)) / (eta sqrt(T)))
    log(T / delta)^{2 max(alpha, beta) + 2}``.
    """
    if spectral.regime is not Regime.HURWITZ:
        raise NotHurwitz(f"NotHurwitz: regime is {spectral.regime.value}")
    sA, sb, a, b = noise.sigma_A, noise.sigma_b, noise.alpha, noise.beta
    if any(math.isnan(x) for x in (sA, sb, a, b)):
        raise ValueError("noise model lacks tail parameters (sigma_A, sigma_b, alpha, beta)")
    if T < 1 or not 0.0 < delta < 1.0 or not eta > 0:
        raise ValueError("need T >= 1, delta in (0, 1), eta > 0")
    th = problem.theta_star
    if th is None:
        raise ValueError("theta_star is required")
    theta0 = np.asarray(theta0, float)
    lam = spectral.spectral_gap
    d = problem.dimension
    nth = float(np.linalg.norm(th))
    V = (spectral.condition_number**2 / spectral.min_abs_eigenvalue
         * (float(np.linalg.norm(th - theta0)) + nth
            + math.sqrt(eta / lam) * (sA * nth + sb * math.sqrt(d))))
    rate = (sA + sb) / T**0.25 + (1.0 + math.sqrt(sA / lam)) / (eta * math.sqrt(T))
    Delta = V * rate * math.log(T / delta) ** (2.0 * max(a, b) + 2.0)
    return DeviationTerms(float(V), float(Delta), int(T), float(delta), float(eta),
                          (sA, sb, a, b))


@dataclass(frozen=True, eq=False)
class ConfidenceEllipse:
    """``{theta : sqrt((theta - center)^T B (theta - center)) <= radius}``."""

    center: np.ndarray
    shape_B: np.ndarray
    radius: float
    c_constant: float

    def norm(self, theta) -> np.ndarray:
        """Weighted distance from the center; accepts one point or a stack of points."""
        v = np.asarray(theta, float) - self.center
        q = np.einsum("...i,ij,...j->...", v, self.shape_B, v)
        return np.sqrt(np.maximum(q, 0.0))

    def contains(self, theta) -> np.ndarray | bool:
        out = self.norm(theta) <= self.radius
        return bool(out) if np.ndim(out) == 0 else out


def _shape_matrix(gamma: np.ndarray, Delta_term: float, delta: float) -> np.ndarray:
    d = gamma.shape[0]
    return gamma * math.log(d / delta) + Delta_term * np.eye(d)


def ellipse(problem: ProblemSpec, bundle: CovarianceBundle, dev: DeviationTerms,
            theta_bar, c: float = 1.0, delta: float | None = None) -> ConfidenceEllipse:
    """Confidence ellipse ``B = Gamma log(d/delta) + Delta(T, delta/d) I``, radius ``c sqrt(d/T)``.

    ``dev`` must be evaluated at ``delta / d``; ``delta`` defaults to
    ``d * dev.delta``.
    """
    if not c >= 0:
        raise ValueError("c must be nonnegative")
    d = problem.dimension
    delta = d * dev.delta if delta is None else float(delta)
    B = _shape_matrix(bundle.gamma_eta, dev.Delta, delta)
    return ConfidenceEllipse(np.asarray(theta_bar, float).copy(), 0.5 * (B + B.T),
                             c * math.sqrt(d / dev.T), float(c))


def q_functional(v, delta: float, rtol: float = 1e-10) -> float:
    """``inf{q >= 0 : sum_j exp(-q / v_j) <= delta}`` by bisection."""
    v = np.atleast_1d(np.asarray(v, float))
    if v.size == 0 or np.any(~(v > 0)):
        raise ValueError("v must be a nonempty positive vector")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    d = v.size
    vmax = float(v.max())

    def excess(q):
        return float(np.sum(np.exp(-q / v))) - delta

    lo, hi = 0.0, vmax * math.log(d / delta)
    # the analytic endpoint can miss by rounding; widen until the sum is <= delta
    while excess(hi) > 0.0:
        hi = hi * (1.0 + 1e-12) + np.finfo(float).tiny
    tol = rtol * vmax
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class LinfBoundTerms:
    variance_term: float
    concentration_term: float
    mixing_term: float
    refined_leading: float
    sigma2_max: float

    @property
    def terms(self) -> tuple[float, float, float]:
        return (self.variance_term, self.concentration_term, self.mixing_term)

    @property
    def total(self) -> float:
        return sum(self.terms)


def linfty_bound_terms(bundle: CovarianceBundle, lambda_bar: float | None, eta: float,
                       T: int, delta: float, oracle: Oracle | None = None) -> LinfBoundTerms:
    """Additive terms of the high-probability sup-norm bound.

    ``sqrt(s2 log(d/delta))``, ``(eta / lbar^2 + 1 / lbar) T^{-1/4} sqrt(log(d/delta))``
    and ``lbar^{-5/2} / (eta sqrt(T))``, with ``s2`` the largest diagonal entry
    of ``Gamma(eta)``, plus the sharper leading term ``Q(diag Gamma; delta)``.
    """
    if oracle is not None:
        lambda_bar = oracle.linf_contraction
    if lambda_bar is None or not lambda_bar > 0:
        raise ContractNotCertified(
            "ContractNotCertified: oracle does not certify an l-infinity contraction")
    G = bundle.gamma_eta
    d = G.shape[0]
    diag = np.diag(G).copy()
    s2 = float(diag.max())
    lg = math.log(d / delta)
    pos = diag[diag > 0]
    refined = 0.0 if pos.size == 0 else q_functional(pos, delta)
    return LinfBoundTerms(
        variance_term=math.sqrt(s2 * lg),
        concentration_term=(eta / lambda_bar**2 + 1.0 / lambda_bar) * T**-0.25 * math.sqrt(lg),
        mixing_term=lambda_bar**-2.5 / (eta * math.sqrt(T)),
        refined_leading=float(refined),
        sigma2_max=s2,
    )


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True, eq=False)
class CoverageTable:
    c_grid: np.ndarray
    coverage: np.ndarray
    wilson_lo: np.ndarray
    wilson_hi: np.ndarray
    n_replicates: int
    delta: float
    distances: np.ndarray
    """Per-replicate ``sqrt(T/d) |theta* - theta_bar|_B``, the smallest covering c."""

    def calibrated_c(self, level: float | None = None) -> float | None:
        """Smallest grid value whose coverage reaches ``level`` (default 1 - delta)."""
        level = 1.0 - self.delta if level is None else level
        hits = np.nonzero(self.coverage >= level)[0]
        return float(self.c_grid[hits[0]]) if hits.size else None

    def rows(self):
        for i in range(self.c_grid.size):
            yield (float(self.c_grid[i]), float(self.coverage[i]),
                   float(self.wilson_lo[i]), float(self.wilson_hi[i]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["c", "coverage", "wilson_lo", "wilson_hi"])
            for row in self.rows():
                w.writerow([repr(x) for x in row])


def coverage_study(problem: ProblemSpec, oracle: Oracle, config: RunConfig, c_grid,
                   n_replicates: int, delta: float = 0.1, threads: int | None = 1,
                   noise: NoiseModel | None = None) -> CoverageTable:
    """Fraction of replicates whose ellipse contains ``theta*``, per ``c``."""
    if problem.theta_star is None:
        raise ValueError("theta_star is required")
    c_grid = np.sort(np.asarray(c_grid, float))
    noise = noise_model_for(oracle, make_streams(config.seed, 2**31 - 2)) if noise is None else noise
    study = run_replicates(problem, oracle, config, n_replicates, threads=threads, strict=True)
    d = problem.dimension
    info = analyze(problem.A_bar)
    theta0 = np.zeros(d) if config.theta0 is None else config.theta0
    bundle = covariance_bundle(problem, noise, study.eta)
    dev = deviation_terms(problem, info, noise, theta0, study.eta, config.T, delta / d)
    B = _shape_matrix(bundle.gamma_eta, dev.Delta, delta)
    err = problem.theta_star - study.per_replicate_avg
    dist = np.sqrt(np.einsum("ri,ij,rj->r", err, B, err)) / math.sqrt(d / config.T)
    cov, lo, hi = [], [], []
    for c in c_grid:
        k = int(np.sum(dist <= c))
        cov.append(k / n_replicates)
        a, b = wilson_interval(k, n_replicates)
        lo.append(a)
        hi.append(b)
    return CoverageTable(c_grid, np.array(cov), np.array(lo), np.array(hi),
                         n_replicates, float(delta), dist)
