"""The acceptance suite: thirteen numbered criteria, each a function.

Every criterion returns a :class:`CriterionResult` whose ``report`` is a
deterministic JSON string (no timings), so reruns with equal seeds can be
compared byte for byte. Runtime is measured separately and checked
against the criterion's time budget.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import io
from .covariance import (
    covariance_bundle,
    empirical_stationary,
    solve_stationary_cov,
)
from .experiments import (
    clt_study,
    counterexample_study,
    coupling_study,
    critical_rate_study,
    momentum_spectrum,
    td_study,
)
from .inference import coverage_study, q_functional
from .lsa import RunConfig, run, telescope_residual
from .oracles import (
    ExactTDOracle,
    GaussianOracle,
    MrpSpec,
    RegressionOracle,
)
from .rng import generator
from .spectral import analyze, stability_threshold

__all__ = [
    "CriterionResult",
    "CRITERIA",
    "run_criterion",
    "run_all",
    "scalar_benchmark",
    "anoise_instance",
    "rotation_instance",
    "PINNED_COVERAGE_C",
    "COVERAGE_C_GRID",
]

SEED = 20240611

#: Calibrated ellipse constant for the scalar benchmark (delta = 0.1,
#: T = 1e4, R = 2000, grid below, seed SEED + 12).
PINNED_COVERAGE_C = 79.43282347242817
COVERAGE_C_GRID = np.geomspace(1.0, 1000.0, 31)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: float = math.inf

    @property
    def within_budget(self) -> bool:
        return self.seconds <= self.budget

    @property
    def ok(self) -> bool:
        return self.passed and self.within_budget

    @property
    def report(self) -> str:
        return io.dumps({"criterion": self.number, "title": self.title,
                         "passed": self.passed, "metrics": self.metrics})

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        extra = "" if self.within_budget else f" (over budget {self.budget:g}s)"
        return f"[{status}] criterion {self.number:2d}: {self.title} ({self.seconds:.1f}s){extra}"


# ------------------------------------------------------------- instances


def scalar_benchmark():
    """``A = 1``, ``b = 1`` (so ``theta* = 1``), unit Gaussian b-noise, no A-noise."""
    o = GaussianOracle.isotropic([[1.0]], [1.0], a_std=0.0, b_std=1.0)
    return o.problem, o


def anoise_instance():
    """Two-dimensional non-symmetric drift with unit Gaussian A-noise."""
    A = np.array([[1.0, 0.5], [-0.5, 1.5]])
    b = np.array([2.0, -1.0])
    o = GaussianOracle.isotropic(A, b, a_std=1.0, b_std=0.5)
    return o.problem, o


ANOISE_ETA = 0.2


def rotation_instance():
    """Pure rotation ``[[0, 1], [-1, 0]]`` with ``xi ~ N(0, I)``."""
    o = GaussianOracle.isotropic([[0.0, 1.0], [-1.0, 0.0]], [0.0, 0.0], a_std=0.0, b_std=1.0)
    return o.problem, o


def _random_hurwitz(rng, d: int, margin: float = 0.3) -> np.ndarray:
    M = rng.standard_normal((d, d)) / math.sqrt(d)
    shift = margin - float(np.min(np.linalg.eigvals(M).real))
    return M + max(shift, 0.0) * np.eye(d)


def _threads(threads):
    return threads if threads is not None else min(8, os.cpu_count() or 1)


# -------------------------------------------------------------- criteria


def criterion_1(threads=None):
    rng = generator(SEED, 1)
    worst = 0.0
    for i in range(50):
        d = int(rng.integers(1, 6))
        A = _random_hurwitz(rng, d)
        b = rng.standard_normal(d)
        o = GaussianOracle.isotropic(A, b, a_std=0.1, b_std=1.0)
        info = analyze(A)
        eta = min(0.1, 0.5 * stability_threshold(info, math.sqrt(o.noise_model().v_A2)))
        traj = run(o.problem, o, RunConfig(eta=eta, T=1000, seed=SEED + i))
        scale = 1.0 + float(np.linalg.norm(o.problem.theta_star))
        worst = max(worst, telescope_residual(traj, o.problem) / scale)
    return worst <= 1e-9, {"max_relative_residual": worst, "tolerance": 1e-9}


def criterion_2(threads=None):
    problem, oracle = scalar_benchmark()
    noise = oracle.noise_model()
    eta = 0.1
    L = float(solve_stationary_cov(problem, noise, eta)[0, 0])
    closed = eta * 1.0 / (2.0 - eta)
    est = empirical_stationary(problem, oracle, eta, n_samples=1_000_000, seed=SEED + 2)
    emp = float(est.cov[0, 0])
    exact_ok = abs(L - closed) <= 1e-9
    emp_ok = abs(emp / closed - 1.0) <= 0.05
    return exact_ok and emp_ok, {
        "solved": L, "closed_form": closed, "abs_error": abs(L - closed),
        "empirical": emp, "empirical_stderr": float(est.cov_stderr[0, 0]),
        "empirical_rel_error": abs(emp / closed - 1.0), "burn_in": est.burn_in,
    }


def criterion_3(threads=None):
    rng = generator(SEED, 3)
    worst = 0.0
    kinds = {"gaussian": 0, "regression": 0, "td": 0}
    for i in range(100):
        d = int(rng.integers(1, 7))
        kind = ("gaussian", "regression", "td")[i % 3]
        if kind == "gaussian":
            A = _random_hurwitz(rng, d)
            o = GaussianOracle.isotropic(A, rng.standard_normal(d), a_std=rng.uniform(0.1, 1.0),
                                         b_std=rng.uniform(0.1, 1.0))
        elif kind == "regression":
            L = rng.standard_normal((d, d)) / math.sqrt(d) + np.eye(d)
            o = RegressionOracle(rng.standard_normal(d), noise_std=rng.uniform(0.1, 1.0),
                                 x_cov=L @ L.T)
        else:
            o = ExactTDOracle(MrpSpec.random(d, float(rng.uniform(0.1, 0.95)), rng))
        kinds[kind] += 1
        noise = o.noise_model()
        info = analyze(o.problem.A_bar)
        eta = 0.5 * stability_threshold(info, math.sqrt(noise.v_A2))
        B = covariance_bundle(o.problem, noise, eta)
        scale = float(np.linalg.norm(eta * B.sigma_star))
        rel = B.residual / scale if scale > 0 else B.residual
        worst = max(worst, rel)
    return worst <= 1e-9, {"max_relative_residual": worst, "tolerance": 1e-9, "instances": kinds}


def criterion_4(threads=None):
    threads = _threads(threads)
    problem, oracle = scalar_benchmark()
    r1 = clt_study(problem, oracle, 0.01, 10_000, 2000, seed=SEED + 4, threads=threads,
                   ratio_tol=0.15)
    p2, o2 = anoise_instance()
    r2 = clt_study(p2, o2, ANOISE_ETA, 10_000, 2000, seed=SEED + 40, threads=threads,
                   ratio_tol=0.20)
    ok1 = all(v.passed for k, v in r1.verdicts.items() if k.startswith(("ratio", "ad_")))
    ok2 = all(v.passed for k, v in r2.verdicts.items() if k.startswith(("ratio", "ad_")))
    m = {
        "scalar_ratio": r1.value("ratio_0"),
        "scalar_anderson_darling": r1.value("anderson_darling_0"),
        "anoise_ratios": [r2.value("ratio_0"), r2.value("ratio_1")],
        "anoise_anderson_darling": [r2.value("anderson_darling_0"),
                                    r2.value("anderson_darling_1")],
        "ad_crit_1pct": r1.value("anderson_darling_crit1pct_0"),
        "scalar_report_digest": r1.config_digest,
        "scalar_report": r1.to_dict()["metrics"],
        "anoise_report": r2.to_dict()["metrics"],
    }
    return ok1 and ok2, m


def criterion_5(threads=None):
    threads = _threads(threads)
    p2, o2 = anoise_instance()
    r = clt_study(p2, o2, ANOISE_ETA, 10_000, 2000, directions=[[1.0, 0.0]], seed=SEED + 5,
                  threads=threads)
    z = r.value("excess_minus_correction_z_0")
    se = r.metrics["excess_over_classical_0"].mc_stderr
    excess = r.value("excess_over_classical_0")
    corr = r.value("correction_0")
    visible = excess > 3.0 * se
    return abs(z) <= 3.0 and visible, {
        "excess_over_classical": excess, "stderr": se, "predicted_correction": corr,
        "z_excess_minus_correction": z, "excess_significant": visible,
    }


def criterion_6(threads=None):
    threads = _threads(threads)
    problem, oracle = rotation_instance()
    r = critical_rate_study(problem, oracle, [1000, 4000, 16000], 500, seed=SEED + 6,
                            theta0=[1.0, 0.0], threads=threads)
    return r.passed, {"slope": r.value("loglog_slope"),
                      "mse": [r.value(f"mse_T{T}") for T in (1000, 4000, 16000)],
                      "bound": [r.value(f"bound_T{T}") for T in (1000, 4000, 16000)],
                      "verdicts": {k: v.passed for k, v in r.verdicts.items()}}


def criterion_7(threads=None):
    r = counterexample_study(2, (0.01, 0.1, 1.0), 1000, T_min=4)
    return r.passed, {k: m.value for k, m in r.metrics.items()}


def criterion_8(threads=None):
    A = np.array([[1.0, 0.3, 0.0], [-0.2, 0.8, 0.1], [0.0, 0.2, 1.2]])
    o = GaussianOracle.isotropic(A, [1.0, 0.0, -1.0], a_std=0.2, b_std=0.5)
    info = analyze(A)
    eta = min(0.1, stability_threshold(info, math.sqrt(o.noise_model().v_A2)))
    r = coupling_study(o.problem, o, eta, [10, 100, 1000], 500, np.zeros(3), np.ones(3),
                       seed=SEED + 8)
    return r.passed, {"eta": eta, **{k: m.value for k, m in r.metrics.items()}}


def criterion_9(threads=None):
    rng = generator(SEED, 9)
    worst = 0.0
    n = 0
    while n < 100:
        lam = rng.uniform(0.01, 2.0, int(rng.integers(1, 6)))
        eta = float(rng.uniform(0.0, 0.5))
        alpha = float(rng.uniform(0.05, 3.0))
        if np.min(np.abs(alpha - (2 * np.sqrt(lam) - eta * lam))) < 1e-3:
            continue
        worst = max(worst, momentum_spectrum(lam, alpha, eta).matched_distance)
        n += 1
    lam_min = 0.01
    alpha = 1.05 * 2.0 * math.sqrt(lam_min)
    rep = momentum_spectrum([lam_min, 0.5, 1.0], alpha, 0.01)
    rel = abs(rep.min_re_lifted / rep.predicted_min_re - 1.0)
    return worst <= 1e-8 and rel <= 0.10, {
        "max_matched_distance": worst, "min_re_lifted": rep.min_re_lifted,
        "predicted_min_re": rep.predicted_min_re, "relative_gap": rel,
    }


def criterion_10(threads=None):
    threads = _threads(threads)
    mrp = MrpSpec.random(5, 0.9, generator(SEED, 10))
    r = td_study(mrp, "ExactDiscounted", [1_000, 10_000, 100_000], 200, seed=SEED + 10,
                 threads=threads)
    return r.passed, {
        "linf_errors": [r.value(f"linf_error_T{T}") for T in (1_000, 10_000, 100_000)],
        "certificate_violations": r.value("certificate_violations"),
        "max_linf_iterate": r.value("max_linf_iterate"),
        "linf_box_radius": r.value("linf_box_radius"),
    }


def _q_grid_oracle(v: np.ndarray, delta: float, n: int = 1_000_000) -> float:
    """Root of ``sum exp(-q / v) = delta`` from a dense grid plus linear interpolation."""
    hi = 1.01 * float(v.max()) * math.log(v.size / delta)
    q = np.linspace(0.0, hi, n)
    f = np.zeros(n)
    for vj in v:
        f += np.exp(-q / vj)
    f -= delta
    k = int(np.argmax(f <= 0.0))
    if k == 0:
        return 0.0
    return float(q[k - 1] + (q[k] - q[k - 1]) * f[k - 1] / (f[k - 1] - f[k]))


def criterion_11(threads=None):
    rng = generator(SEED, 11)
    worst = 0.0
    for _ in range(50):
        v = rng.uniform(0.1, 5.0, int(rng.integers(1, 11)))
        delta = float(rng.uniform(0.01, 0.5))
        worst = max(worst, abs(q_functional(v, delta) - _q_grid_oracle(v, delta)))
    worst_eq = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 11))
        s = float(rng.uniform(0.1, 5.0))
        delta = float(rng.uniform(0.01, 0.5))
        worst_eq = max(worst_eq, abs(q_functional(np.full(d, s), delta) - s * math.log(d / delta)))
    return worst <= 1e-6 and worst_eq <= 1e-10, {
        "max_grid_gap": worst, "max_equal_entry_gap": worst_eq}


def criterion_12(threads=None):
    threads = _threads(threads)
    problem, oracle = scalar_benchmark()
    cfg = RunConfig(eta=0.01, T=10_000, theta0=problem.theta_star, seed=SEED + 12)
    tab = coverage_study(problem, oracle, cfg, COVERAGE_C_GRID, 2000, delta=0.1,
                         threads=threads)
    monotone = bool(np.all(np.diff(tab.coverage) >= 0))
    c_star = tab.calibrated_c(0.9)
    pinned = c_star is not None and math.isclose(c_star, PINNED_COVERAGE_C, rel_tol=1e-12)
    return monotone and c_star is not None and pinned, {
        "coverage": list(tab.coverage), "c_grid": list(tab.c_grid), "monotone": monotone,
        "calibrated_c": c_star, "pinned_c": PINNED_COVERAGE_C,
    }


def criterion_13(threads=None):
    same = {}
    for n in (2, 4, 6):
        first = run_criterion(n, threads)
        # a different worker count must not change the bytes either
        second = run_criterion(n, 1 if _threads(threads) > 1 else 2)
        same[str(n)] = first.report == second.report
    return all(same.values()), {"byte_identical": same}


CRITERIA = {
    1: ("telescope identity on random Hurwitz instances", criterion_1, 5),
    2: ("stationary covariance closed form and long-chain estimate", criterion_2, 30),
    3: ("stationary equation plug-back residual", criterion_3, 10),
    4: ("asymptotic covariance at desk scale", criterion_4, 180),
    5: ("step-size correction visible", criterion_5, 180),
    6: ("critical-case 1/T rate and explicit bound", criterion_6, 300),
    7: ("non-diagonalizable lower bound", criterion_7, 5),
    8: ("synchronous coupling contraction", criterion_8, 60),
    9: ("momentum lifted spectrum", criterion_9, 10),
    10: ("exact discounted TD convergence and certificates", criterion_10, 180),
    11: ("Q functional vs grid oracle", criterion_11, 5),
    12: ("ellipse coverage calibration", criterion_12, 180),
    13: ("determinism of criteria 2, 4, 6", criterion_13, 600),
}


def run_criterion(number: int, threads=None) -> CriterionResult:
    title, fn, budget = CRITERIA[number]
    t0 = time.perf_counter()
    passed, metrics = fn(threads)
    seconds = time.perf_counter() - t0
    return CriterionResult(number, title, bool(passed), io.to_jsonable(metrics), seconds,
                           float(budget))


def run_all(threads=None, numbers=None, echo=None) -> list[CriterionResult]:
    out = []
    for n in (numbers or sorted(CRITERIA)):
        res = run_criterion(n, threads)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
