"""Packaged Monte Carlo studies.

Each study returns a :class:`StudyReport` holding scalar metrics (with Monte
Carlo standard errors where meaningful), pass/fail verdicts that each name
the metric they test, and raw tables. ``StudyReport.write`` lays these out
as ``<out>/<study_id>-<digest>/{report.json, metrics.csv, <table>.csv}``;
the digest is a SHA-256 of the serialized inputs, so identical inputs map
to identical directories and identical bytes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import anderson

from . import io
from .covariance import covariance_bundle
from .errors import Defective, Diverged, ExcludedAlpha, NotHurwitz
from .inference import linfty_bound_terms
from .lsa import Record, RunConfig, Schedule, run, run_coupled, run_replicates
from .oracles import (
    ExactTDOracle,
    LinearTDOracle,
    MrpSpec,
    NoiseModel,
    Oracle,
    ProblemSpec,
    counterexample_oracle,
    lift_momentum,
    noise_model_for,
)
from .rng import make_streams, replicate_streams
from .spectral import Regime, analyze, critical_step_size, stability_threshold

__all__ = [
    "Metric",
    "Verdict",
    "StudyReport",
    "clt_study",
    "critical_mse_bound",
    "critical_rate_study",
    "counterexample_study",
    "MomentumSpectrumReport",
    "momentum_spectrum",
    "momentum_min_re",
    "momentum_mixing_study",
    "td_study",
    "moment_bound_study",
    "coupling_study",
    "momentum_spectrum_study",
    "coverage_report",
]

NOISE_KEY = 2**31 - 2


@dataclass(frozen=True)
class Metric:
    value: float
    mc_stderr: float | None = None


@dataclass(frozen=True)
class Verdict:
    passed: bool
    metric: str


@dataclass
class StudyReport:
    study_id: str
    config: dict
    metrics: dict[str, Metric] = field(default_factory=dict)
    verdicts: dict[str, Verdict] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    tables: dict[str, tuple[list[str], list]] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)

    @property
    def config_digest(self) -> str:
        return hashlib.sha256(io.dumps(self.config).encode()).hexdigest()

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())

    def metric(self, name: str, value, stderr=None) -> None:
        self.metrics[name] = Metric(float(value), None if stderr is None else float(stderr))

    def verdict(self, name: str, passed, metric: str) -> None:
        if metric not in self.metrics:
            raise KeyError(f"verdict {name!r} refers to unknown metric {metric!r}")
        self.verdicts[name] = Verdict(bool(passed), metric)

    def value(self, name: str) -> float:
        return self.metrics[name].value

    def to_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "config_digest": self.config_digest,
            "config": self.config,
            "metrics": {k: {"value": m.value, "mc_stderr": m.mc_stderr}
                        for k, m in self.metrics.items()},
            "verdicts": {k: {"pass": v.passed, "metric": v.metric}
                         for k, v in self.verdicts.items()},
            "notes": self.notes,
            "artifacts": self.artifacts,
        }

    def to_json(self) -> str:
        return io.dumps(self.to_dict())

    def write(self, out_root) -> Path:
        out = Path(out_root) / f"{self.study_id}-{self.config_digest[:16]}"
        out.mkdir(parents=True, exist_ok=True)
        self.artifacts = ["report.json", "metrics.csv"] + [f"{n}.csv" for n in self.tables]
        for name, (header, rows) in self.tables.items():
            io.write_rows_csv(out / f"{name}.csv", header, rows)
        io.write_rows_csv(out / "metrics.csv", ["name", "value", "mc_stderr"],
                          ([k, m.value, "" if m.mc_stderr is None else m.mc_stderr]
                           for k, m in self.metrics.items()))
        (out / "report.json").write_text(self.to_json())
        return out


def _noise(oracle: Oracle, seed: int, noise: NoiseModel | None) -> NoiseModel:
    return noise_model_for(oracle, make_streams(seed, NOISE_KEY)) if noise is None else noise


def _problem_config(problem: ProblemSpec) -> dict:
    return {"A_bar": problem.A_bar, "b_bar": problem.b_bar, "theta_star": problem.theta_star}


def _oracle_label(oracle: Oracle) -> str:
    return type(oracle).__name__


def _var_stderr(x: np.ndarray) -> tuple[float, float]:
    """Sample variance and its standard error from the fourth central moment."""
    c = x - x.mean()
    sq = c * c
    n = x.size
    return float(sq.sum() / (n - 1)), float(sq.std(ddof=1) / math.sqrt(n))


def _loglog_slope(T, y) -> float:
    T = np.asarray(T, float)
    y = np.asarray(y, float)
    if y.size < 2 or np.any(~(y > 0)):
        return math.nan
    return float(np.polyfit(np.log(T), np.log(y), 1)[0])


# ---------------------------------------------------------------- CLT study


def clt_study(problem: ProblemSpec, oracle: Oracle, eta: float, T: int, n_replicates: int,
              directions=None, seed: int = 0, threads: int | None = 1,
              noise: NoiseModel | None = None, ratio_tol: float = 0.15,
              theta0=None, backend: str | None = None) -> StudyReport:
    """Empirical variance of ``sqrt(T) v^T (theta_bar - theta*)`` against ``v^T Gamma v``.

    The chain starts at ``theta*`` unless ``theta0`` is given, so the
    averaged error carries no initialization bias.
    """
    d = problem.dimension
    V = np.eye(d) if directions is None else np.atleast_2d(np.asarray(directions, float))
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    theta0 = problem.theta_star if theta0 is None else np.asarray(theta0, float)
    noise = _noise(oracle, seed, noise)
    cfg = RunConfig(eta=eta, T=T, theta0=theta0, seed=seed, backend=backend)
    study = run_replicates(problem, oracle, cfg, n_replicates, threads=threads, strict=True)
    bundle = covariance_bundle(problem, noise, eta)
    rep = StudyReport("clt", {
        "problem": _problem_config(problem), "oracle": _oracle_label(oracle),
        "eta": eta, "T": T, "n_replicates": n_replicates, "directions": V, "seed": seed,
        "theta0": theta0, "ratio_tol": ratio_tol,
    })
    z = study.scaled_errors
    rep.metric("residual_stationary_eq", bundle.residual)
    for j, v in enumerate(V):
        p = z @ v
        var, se = _var_stderr(p)
        g = float(v @ bundle.gamma_eta @ v)
        cl = float(v @ bundle.classical @ v)
        corr = g - cl
        rep.metric(f"emp_var_{j}", var, se)
        rep.metric(f"gamma_{j}", g)
        rep.metric(f"classical_{j}", cl)
        rep.metric(f"correction_{j}", corr)
        if g > 0:
            ratio, ratio_se = var / g, se / g
        else:
            ratio, ratio_se = (1.0 if var == 0 else math.inf), 0.0
        rep.metric(f"ratio_{j}", ratio, ratio_se)
        rep.verdict(f"ratio_within_{ratio_tol:g}_{j}", abs(ratio - 1.0) <= ratio_tol, f"ratio_{j}")
        if cl > 0:
            rep.metric(f"ratio_classical_{j}", var / cl, se / cl)
        excess = var - cl
        rep.metric(f"excess_over_classical_{j}", excess, se)
        if se > 0:
            zc = (excess - corr) / se
            rep.metric(f"excess_minus_correction_z_{j}", zc)
            rep.verdict(f"correction_within_3se_{j}", abs(zc) <= 3.0,
                        f"excess_minus_correction_z_{j}")
            rep.metric(f"correction_snr_{j}", corr / se)
            sd = p.std(ddof=1)
            ad = anderson((p - p.mean()) / sd, dist="norm")
            idx = list(ad.significance_level).index(1.0)
            rep.metric(f"anderson_darling_{j}", ad.statistic)
            rep.metric(f"anderson_darling_crit1pct_{j}", ad.critical_values[idx])
            rep.verdict(f"ad_below_1pct_{j}", ad.statistic < ad.critical_values[idx],
                        f"anderson_darling_{j}")
    rep.tables["replicates"] = (
        ["replicate"] + [f"scaled_err_{i + 1}" for i in range(d)],
        [[i] + list(row) for i, row in enumerate(z)],
    )
    return rep


# ------------------------------------------------------------ critical case


def critical_mse_bound(problem: ProblemSpec, noise: NoiseModel, kappa: float,
                       theta0, eta: float, T: int) -> float:
    """Explicit bound on ``E|A (theta_bar_T - theta*)|^2`` in the critical case.

    Combines the telescope identity with the moment bound
    ``E|theta_t - theta*|^2 <= e kappa^2 (r0^2 + eta^2 t S)``,
    ``S = v_b^2 d + v_A^2 |theta*|^2``:

        2/(eta T)^2 (2 r0^2 + 2 e kappa^2 (r0^2 + eta^2 T S))
        + 6/T^2 (v_A^2 e kappa^2 (T r0^2 + eta^2 S T(T-1)/2) + T S).
    """
    th = problem.theta_star
    r02 = float(np.sum((np.asarray(theta0, float) - th) ** 2))
    S = noise.v_b2 * problem.dimension + noise.v_A2 * float(th @ th)
    ek2 = math.e * kappa**2
    drift = 2.0 / (eta * T) ** 2 * (2.0 * r02 + 2.0 * ek2 * (r02 + eta**2 * T * S))
    mart = 6.0 / T**2 * (noise.v_A2 * ek2 * (T * r02 + eta**2 * S * T * (T - 1) / 2.0) + T * S)
    return float(drift + mart)


def critical_rate_study(problem: ProblemSpec, oracle: Oracle, T_grid, n_replicates: int,
                        seed: int = 0, theta0=None, threads: int | None = 1,
                        eta_scale: float = 1.0, noise: NoiseModel | None = None,
                        project_out=None, slope_band=(-1.25, -0.75),
                        backend: str | None = None) -> StudyReport:
    """Bellman-residual MSE ``E|A theta_bar_T - b|^2`` at the critical-case step size.

    ``project_out`` (a vector) is removed from every average before the
    residual is taken; it leaves the residual unchanged when it spans the
    null space of ``A`` and is reported for bookkeeping only.
    """
    info = analyze(problem.A_bar)
    if info.regime is Regime.UNSTABLE:
        raise NotHurwitz("NotHurwitz: regime is Unstable")
    if not info.diagonalizable:
        raise Defective("Defective: the critical-case rate requires a diagonalizable drift")
    d = problem.dimension
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, float)
    noise = _noise(oracle, seed, noise)
    v_A = math.sqrt(noise.v_A2)
    rep = StudyReport("critical_rate", {
        "problem": _problem_config(problem), "oracle": _oracle_label(oracle),
        "T_grid": list(T_grid), "n_replicates": n_replicates, "seed": seed,
        "theta0": theta0, "eta_scale": eta_scale,
    })
    rep.metric("kappa", info.condition_number)
    rep.metric("spectral_gap", info.spectral_gap)
    mses, rows, ok_T = [], [], []
    any_diverged = False
    for T in T_grid:
        eta = eta_scale * critical_step_size(info, v_A, T)
        cfg = RunConfig(eta=eta, T=T, theta0=theta0, seed=seed, backend=backend)
        try:
            st = run_replicates(problem, oracle, cfg, n_replicates, threads=threads)
        except Diverged:
            rep.metric(f"diverged_T{T}", n_replicates)
            any_diverged = True
            continue
        avg = st.per_replicate_avg[st.ok]
        if project_out is not None:
            u = np.asarray(project_out, float)
            u = u / np.linalg.norm(u)
            avg = avg - np.outer(avg @ u, u)
        res = avg @ problem.A_bar.T - problem.b_bar
        sq = np.sum(res * res, axis=1)
        mse, se = float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(sq.size))
        bound = critical_mse_bound(problem, noise, info.condition_number, theta0, eta, T)
        rep.metric(f"eta_T{T}", eta)
        rep.metric(f"mse_T{T}", mse, se)
        rep.metric(f"bound_T{T}", bound)
        rep.metric(f"diverged_T{T}", st.diverged_count)
        rep.verdict(f"mse_below_bound_T{T}", mse <= bound, f"mse_T{T}")
        any_diverged |= st.diverged_count > 0
        mses.append(mse)
        ok_T.append(T)
        rows.append([T, eta, mse, se, bound, st.diverged_count])
    slope = _loglog_slope(ok_T, mses) if not any_diverged else math.nan
    rep.metric("loglog_slope", slope)
    if len(mses) == len(T_grid) and all(m > 0 for m in mses):
        lo, hi = slope_band
        rep.verdict("slope_in_band", lo <= slope <= hi, "loglog_slope")
    rep.tables["mse_by_T"] = (["T", "eta", "mse", "mse_stderr", "bound", "diverged"], rows)
    return rep


def counterexample_study(d: int = 2, etas=(0.01, 0.1, 1.0), T_max: int = 1000,
                         T_min: int = 4) -> StudyReport:
    """``min_T |theta_bar_T - theta*|`` for the non-diagonalizable critical instance.

    The divergence guard is disabled: the iterates grow geometrically for
    the larger steps, which is the point of the example.
    """
    oracle = counterexample_oracle(d)
    problem = oracle.problem
    info = analyze(problem.A_bar)
    rep = StudyReport("counterexample", {"d": d, "etas": list(etas), "T_max": T_max,
                                         "T_min": T_min})
    rep.metric("diagonalizable", float(info.diagonalizable))
    rep.metric("min_abs_eigenvalue", info.min_abs_eigenvalue)
    rep.metric("spectral_gap", info.spectral_gap)
    rows = []
    for eta in etas:
        cfg = RunConfig(eta=eta, T=T_max, theta0=oracle.theta0, record=Record("full"),
                        overflow_guard=math.inf)
        traj = run(problem, oracle, cfg)
        csum = np.cumsum(traj.iterates[:-1], axis=0)
        t = np.arange(1, T_max + 1)
        err = np.linalg.norm(csum / t[:, None] - problem.theta_star, axis=1)
        window = err[T_min - 1:]
        rep.metric(f"min_error_eta{eta:g}", window.min())
        rep.verdict(f"lower_bound_half_eta{eta:g}", window.min() >= 0.5,
                    f"min_error_eta{eta:g}")
        rows.extend([eta, int(T), float(e)] for T, e in zip(t[T_min - 1:], window))
    rep.tables["errors"] = (["eta", "T", "avg_error_l2"], rows)
    return rep


# ---------------------------------------------------------------- momentum


@dataclass(frozen=True, eq=False)
class MomentumSpectrumReport:
    base_eigenvalues: np.ndarray
    lifted_eigenvalues: np.ndarray
    formula_eigenvalues: np.ndarray
    matched_distance: float
    min_re_lifted: float
    predicted_min_re: float
    alpha: float
    eta: float


def momentum_min_re(lam: float, alpha: float, eta: float) -> float:
    """Smallest real part among the two lifted eigenvalues paired with ``lam``.

    With ``a = alpha + eta lam``: real roots (``a >= 2 sqrt(lam)``) give
    ``(a - sqrt(a^2 - 4 lam)) / 2``, computed as ``2 lam / (a + sqrt(.))``;
    complex roots give ``a / 2``.
    """
    a = alpha + eta * lam
    disc = a * a - 4.0 * lam
    if disc >= 0:
        return 2.0 * lam / (a + math.sqrt(disc))
    return a / 2.0


def _lifted_drift(base_eigs: np.ndarray, alpha: float, eta: float) -> np.ndarray:
    d = base_eigs.size
    L = np.diag(base_eigs)
    I = np.eye(d)
    return np.block([[np.zeros((d, d)), I], [-L, alpha * I + eta * L]])


def momentum_spectrum(base_eigs, alpha: float, eta: float,
                      exclusion_tol: float = 1e-10) -> MomentumSpectrumReport:
    lam = np.atleast_1d(np.asarray(base_eigs, float))
    if np.any(~(lam > 0)):
        raise ValueError("base eigenvalues must be positive")
    excluded = 2.0 * np.sqrt(lam) - eta * lam
    if np.any(np.abs(alpha - excluded) <= exclusion_tol):
        raise ExcludedAlpha(
            f"ExcludedAlpha: alpha = {alpha!r} hits 2 sqrt(lam) - eta lam (repeated root)")
    lifted = np.linalg.eigvals(_lifted_drift(lam, alpha, eta))
    a = alpha + eta * lam
    root = np.sqrt((a * a - 4.0 * lam).astype(complex))
    formula = np.concatenate([(a + root) / 2.0, (a - root) / 2.0])
    cost = np.abs(lifted[:, None] - formula[None, :])
    r, c = linear_sum_assignment(cost)
    lam_min = float(lam.min())
    return MomentumSpectrumReport(
        base_eigenvalues=lam,
        lifted_eigenvalues=lifted,
        formula_eigenvalues=formula,
        matched_distance=float(cost[r, c].max()),
        min_re_lifted=float(lifted.real.min()),
        predicted_min_re=momentum_min_re(lam_min, alpha, eta),
        alpha=float(alpha),
        eta=float(eta),
    )


def _decay_rate(curve: np.ndarray, floor: np.ndarray, times: np.ndarray, t_max: float):
    """Least-squares rate of ``log curve`` over ``t <= t_max`` above ``10 x floor``."""
    keep = (times <= t_max) & (curve > 10.0 * floor) & (curve > 0)
    if keep.sum() < 3:
        return math.nan, 0.0
    slope = np.polyfit(times[keep], np.log(curve[keep]), 1)[0]
    return float(-slope), float(times[keep].max())


def momentum_mixing_study(base_oracle: Oracle, alpha: float, eta: float, T: int,
                          n_replicates: int, seed: int = 0, theta0=None,
                          every: int | None = None, threads: int | None = 1,
                          window: float = 5.0, backend: str | None = None) -> StudyReport:
    """Decay rate of ``|E theta_t - theta*|^2`` for plain vs momentum-lifted LSA.

    The mean error evolves deterministically as ``(I - eta A)^t``, so its
    decay isolates the mixing rate from the stationary spread; the fit uses
    the first ``window / (eta r)`` steps, ``r`` the chain's smallest real
    eigenvalue part.
    """
    problem = base_oracle.problem
    A = problem.A_bar
    if not np.allclose(A, A.T) or np.linalg.eigvalsh(0.5 * (A + A.T))[0] <= 0:
        raise ValueError("momentum mixing study needs a symmetric positive definite drift")
    d = problem.dimension
    lam = np.linalg.eigvalsh(A)
    th = problem.theta_star
    theta0 = th + 1.0 if theta0 is None else np.asarray(theta0, float)
    lifted = lift_momentum(base_oracle, alpha, eta)
    spec = momentum_spectrum(lam, alpha, eta)
    every = max(1, T // 2000) if every is None else every
    rep = StudyReport("momentum_mixing", {
        "problem": _problem_config(problem), "oracle": _oracle_label(base_oracle),
        "alpha": alpha, "eta": eta, "T": T, "n_replicates": n_replicates, "seed": seed,
        "theta0": theta0, "every": every, "window": window,
    })
    rep.notes.append("rate measured on the squared mean error, a second-moment proxy "
                     "for the mixing time rather than a total-variation mixing time")
    chains = {
        "plain": (problem, base_oracle, theta0, float(lam.min()),
                  np.eye(d) - eta * A),
        "momentum": (lifted.problem, lifted, np.concatenate([theta0, np.zeros(d)]),
                     spec.min_re_lifted, np.eye(2 * d) - eta * lifted.problem.A_bar),
    }
    rates = {}
    rows = []
    for name, (prob, orc, start, min_re, M) in chains.items():
        cfg = RunConfig(eta=eta, T=T, theta0=start, seed=seed, record=Record("thinned", every),
                        backend=backend)
        st = run_replicates(prob, orc, cfg, n_replicates, threads=threads, strict=True)
        X = st.iterates - prob.theta_star
        mean = X.mean(axis=0)
        curve = np.sum(mean**2, axis=1)
        floor = np.sum(X.var(axis=0, ddof=1), axis=1) / n_replicates
        t_max = window / (eta * min_re)
        rate, used = _decay_rate(curve, floor, st.iterate_times.astype(float), t_max)
        exact = -2.0 * math.log(float(np.max(np.abs(np.linalg.eigvals(M)))))
        rates[name] = rate
        rep.metric(f"rate_{name}", rate)
        rep.metric(f"rate_predicted_{name}", exact)
        rep.metric(f"min_re_{name}", min_re)
        rep.metric(f"fit_window_end_{name}", used)
        rows.extend([name, int(t), float(c), float(f)]
                    for t, c, f in zip(st.iterate_times, curve, floor))
    measured = rates["momentum"] / rates["plain"]
    predicted = spec.min_re_lifted / float(lam.min())
    rep.metric("speedup_measured", measured)
    rep.metric("speedup_predicted", predicted)
    rep.metric("speedup_inverse_sqrt_lambda_min", 1.0 / math.sqrt(float(lam.min())))
    rep.metric("speedup_ratio", measured / predicted)
    rep.verdict("speedup_within_band", 0.3 <= measured / predicted <= 3.0, "speedup_ratio")
    rep.tables["mean_error_curves"] = (["chain", "t", "mean_error_sq", "mc_floor"], rows)
    return rep


# ---------------------------------------------------------------------- TD


def td_study(mrp: MrpSpec, mode: str, T_grid, n_replicates: int, seed: int = 0,
             eta: float | None = None, features=None, delta: float = 0.05,
             threads: int | None = 1, backend: str | None = None) -> StudyReport:
    """TD(0) error across horizons.

    ``ExactDiscounted`` uses ``eta = T^{-1/3}`` unless ``eta`` is given,
    checks the sup-norm certificates on every sample and the sup-norm box
    on every iterate; ``LinearFA`` reports the ``L2(mu)`` error of the
    projected fixed point; ``AverageReward`` (discount forced to 1,
    rewards centered) reports the Bellman-residual MSE at the
    critical-case step size.
    """
    rep = StudyReport("td", {
        "P": mrp.transition_P, "r": mrp.reward_r, "gamma": mrp.discount_gamma,
        "mode": mode, "T_grid": list(T_grid), "n_replicates": n_replicates, "seed": seed,
        "eta": eta, "features": features, "delta": delta,
    })
    if mode == "AverageReward":
        chain = MrpSpec(mrp.transition_P, mrp.reward_r, 1.0)
        oracle = ExactTDOracle(chain, center_rewards=True)
        w = np.linalg.eigvals(chain.transition_P)
        others = np.delete(w, np.argmin(np.abs(w - 1.0)))
        rep.metric("min_gap_one_minus_eig", float(np.min(np.abs(1.0 - others))) if others.size
                   else math.nan)
        sub = critical_rate_study(oracle.problem, oracle, T_grid, n_replicates, seed=seed,
                                  threads=threads, project_out=np.ones(chain.n_states),
                                  backend=backend)
        rep.metrics.update(sub.metrics)
        rep.verdicts.update(sub.verdicts)
        rep.tables.update(sub.tables)
        rep.notes.append("averages projected onto the mean-zero subspace before the residual")
        return rep

    if mode == "ExactDiscounted":
        oracle = ExactTDOracle(mrp)
        def err_fn(avg):
            return np.max(np.abs(avg - oracle.problem.theta_star), axis=1)
        err_name = "linf_error"
    elif mode == "LinearFA":
        if features is None:
            raise ValueError("LinearFA mode needs features")
        oracle = LinearTDOracle(mrp, np.asarray(features, float))
        M = oracle.feature_cov
        def err_fn(avg):
            D = avg - oracle.problem.theta_star
            return np.sqrt(np.einsum("ri,ij,rj->r", D, M, D))
        err_name = "l2mu_error"
    else:
        raise ValueError(f"unknown TD mode {mode!r}")

    problem = oracle.problem
    noise = _noise(oracle, seed, None)
    lam_bar = oracle.linf_contraction
    errs, rows = [], []
    violations, worst_linf = 0, 0.0
    for T in T_grid:
        if eta is None:
            cfg = RunConfig(eta=1.0, T=T, seed=seed, schedule=Schedule.CUBE_ROOT_T,
                            backend=backend)
        else:
            cfg = RunConfig(eta=eta, T=T, seed=seed, backend=backend)
        st = run_replicates(problem, oracle, cfg, n_replicates, threads=threads,
                            certify=True, strict=True)
        e = err_fn(st.per_replicate_avg)
        mean, se = float(e.mean()), float(e.std(ddof=1) / math.sqrt(e.size))
        errs.append(mean)
        violations += st.certificate_violations
        worst_linf = max(worst_linf, st.max_linf)
        rep.metric(f"eta_T{T}", st.eta)
        rep.metric(f"{err_name}_T{T}", mean, se)
        bundle = covariance_bundle(problem, noise, st.eta)
        if mode == "ExactDiscounted":
            terms = linfty_bound_terms(bundle, lam_bar, st.eta, T, delta)
            rep.metric(f"linf_bound_leading_T{T}", terms.variance_term / math.sqrt(T))
            rep.metric(f"linf_bound_refined_T{T}", math.sqrt(terms.refined_leading / T))
            rows.append([T, st.eta, mean, se, *terms.terms, terms.refined_leading])
        else:
            pred = math.sqrt(float(np.trace(bundle.gamma_eta @ M)) / T)
            rep.metric(f"l2mu_predicted_T{T}", pred)
            rows.append([T, st.eta, mean, se, pred])
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    rep.metric(f"{err_name}_decreasing", float(decreasing))
    rep.verdict(f"{err_name}_decreasing", decreasing, f"{err_name}_decreasing")
    if mode == "ExactDiscounted":
        rep.metric("certificate_violations", violations)
        rep.verdict("certificates_hold", violations == 0, "certificate_violations")
        rep.metric("max_linf_iterate", worst_linf)
        rep.metric("linf_box_radius", 1.0 / lam_bar)
        rep.verdict("iterates_in_linf_box", worst_linf <= 1.0 / lam_bar * (1 + 1e-12),
                    "max_linf_iterate")
        header = ["T", "eta", "linf_error", "stderr", "variance_term", "concentration_term",
                  "mixing_term", "refined_leading"]
    else:
        header = ["T", "eta", "l2mu_error", "stderr", "predicted"]
    rep.tables["error_by_T"] = (header, rows)
    return rep


# ----------------------------------------------------- moment and coupling


def moment_bound_study(problem: ProblemSpec, oracle: Oracle, eta: float | None, T: int,
                       n_replicates: int, theta0=None, seed: int = 0, every: int = 10,
                       critical: bool = False, threads: int | None = 1,
                       noise: NoiseModel | None = None,
                       backend: str | None = None) -> StudyReport:
    """Running ``E|theta_t - theta*|^2`` against its explicit upper bound.

    Hurwitz: ``kappa^2 (r0^2 + (eta / lam*)(v_A^2 |theta*|^2 + v_b^2 d))``.
    Critical (``critical=True``, step from the critical-case rule):
    ``e kappa^2 (r0^2 + eta^2 t (v_b^2 d + v_A^2 |theta*|^2))``.
    Without ``eta`` the Hurwitz case uses half the stability threshold.
    """
    info = analyze(problem.A_bar)
    noise = _noise(oracle, seed, noise)
    d = problem.dimension
    th = problem.theta_star
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, float)
    if critical:
        eta = critical_step_size(info, math.sqrt(noise.v_A2), T)
    elif info.regime is not Regime.HURWITZ:
        raise NotHurwitz(f"NotHurwitz: regime is {info.regime.value}")
    elif eta is None:
        eta = 0.5 * stability_threshold(info, math.sqrt(noise.v_A2))
    cfg = RunConfig(eta=eta, T=T, theta0=theta0, seed=seed, record=Record("thinned", every),
                    backend=backend)
    st = run_replicates(problem, oracle, cfg, n_replicates, threads=threads, strict=True)
    sq = np.sum((st.iterates - th) ** 2, axis=2)
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(n_replicates)
    t = st.iterate_times.astype(float)
    k2 = info.condition_number**2
    r02 = float(np.sum((theta0 - th) ** 2))
    S = noise.v_b2 * d + noise.v_A2 * float(th @ th)
    if critical:
        bound = math.e * k2 * (r02 + eta**2 * t * S)
    else:
        bound = np.full_like(t, k2 * (r02 + eta / info.spectral_gap * S))
    excess = mean - bound - 3.0 * se
    rep = StudyReport("moment_bound", {
        "problem": _problem_config(problem), "oracle": _oracle_label(oracle), "eta": eta,
        "T": T, "n_replicates": n_replicates, "theta0": theta0, "seed": seed,
        "every": every, "critical": critical,
    })
    rep.metric("eta", eta)
    rep.metric("max_excess_over_bound", float(excess.max()))
    rep.metric("max_ratio_to_bound", float(np.max(mean / np.maximum(bound, 1e-300))))
    rep.verdict("moment_bound_holds", excess.max() <= 0.0, "max_excess_over_bound")
    rep.tables["moments"] = (["t", "mean_sq_error", "stderr", "bound"],
                             [[int(a), b, c, e] for a, b, c, e in zip(t, mean, se, bound)])
    return rep


def coupling_study(problem: ProblemSpec, oracle: Oracle, eta: float, T_list, n_replicates: int,
                   theta0_a, theta0_b, seed: int = 0,
                   backend: str | None = None) -> StudyReport:
    """Synchronously coupled chains: ``E|theta_T^(1) - theta_T^(2)|^2`` vs
    ``exp(-lam* eta T) kappa^2 |theta0^(1) - theta0^(2)|^2``."""
    info = analyze(problem.A_bar)
    if info.regime is not Regime.HURWITZ:
        raise NotHurwitz(f"NotHurwitz: regime is {info.regime.value}")
    a = np.asarray(theta0_a, float)
    b = np.asarray(theta0_b, float)
    gap2 = float(np.sum((a - b) ** 2))
    rep = StudyReport("coupling", {
        "problem": _problem_config(problem), "oracle": _oracle_label(oracle), "eta": eta,
        "T_list": list(T_list), "n_replicates": n_replicates, "theta0_a": a, "theta0_b": b,
        "seed": seed,
    })
    rows = []
    for T in T_list:
        cfg = RunConfig(eta=eta, T=T, theta0=a, seed=seed, record=Record("final"),
                        backend=backend)
        dist = np.empty(n_replicates)
        for i in range(n_replicates):
            x, y = run_coupled(problem, oracle, cfg, b, replicate_streams(seed, i), eta=eta)
            dist[i] = float(np.sum((x.final - y.final) ** 2))
        mean, se = float(dist.mean()), float(dist.std(ddof=1) / math.sqrt(n_replicates))
        bound = math.exp(-info.spectral_gap * eta * T) * info.condition_number**2 * gap2
        rep.metric(f"coupled_sq_dist_T{T}", mean, se)
        rep.metric(f"bound_T{T}", bound)
        rep.verdict(f"coupling_bound_T{T}", mean <= bound + 3.0 * se, f"coupled_sq_dist_T{T}")
        rows.append([T, mean, se, bound])
    rep.tables["coupling"] = (["T", "mean_sq_dist", "stderr", "bound"], rows)
    return rep


def momentum_spectrum_study(base_eigs, alpha: float, eta: float,
                            tol: float = 1e-8) -> StudyReport:
    """:func:`momentum_spectrum` wrapped as a report with a matching verdict."""
    spec = momentum_spectrum(base_eigs, alpha, eta)
    rep = StudyReport("momentum_spectrum", {"base_eigs": spec.base_eigenvalues,
                                            "alpha": alpha, "eta": eta, "tol": tol})
    rep.metric("matched_distance", spec.matched_distance)
    rep.metric("min_re_lifted", spec.min_re_lifted)
    rep.metric("predicted_min_re", spec.predicted_min_re)
    rep.verdict("spectrum_matches_formula", spec.matched_distance <= tol, "matched_distance")
    rep.tables["eigenvalues"] = (
        ["source", "re", "im"],
        [["lifted", z.real, z.imag] for z in np.sort_complex(spec.lifted_eigenvalues)]
        + [["formula", z.real, z.imag] for z in np.sort_complex(spec.formula_eigenvalues)],
    )
    return rep


def coverage_report(problem: ProblemSpec, oracle: Oracle, config: RunConfig, c_grid,
                    n_replicates: int, delta: float, threads: int | None = 1,
                    noise: NoiseModel | None = None) -> StudyReport:
    """:func:`coverage_study` as a report: coverage per ``c`` and the calibrated ``c``."""
    from .inference import coverage_study

    tab = coverage_study(problem, oracle, config, c_grid, n_replicates, delta=delta,
                         threads=threads, noise=noise)
    rep = StudyReport("coverage", {
        "problem": _problem_config(problem), "oracle": _oracle_label(oracle),
        "eta": config.eta, "T": config.T, "theta0": config.theta0, "seed": config.seed,
        "c_grid": tab.c_grid, "n_replicates": n_replicates, "delta": delta,
    })
    for c, cov, lo, hi in tab.rows():
        rep.metric(f"coverage_c{c:g}", cov, math.sqrt(cov * (1 - cov) / n_replicates))
    monotone = bool(np.all(np.diff(tab.coverage) >= 0))
    rep.metric("coverage_monotone", float(monotone))
    rep.verdict("coverage_monotone", monotone, "coverage_monotone")
    c_star = tab.calibrated_c()
    rep.metric("calibrated_c", math.nan if c_star is None else c_star)
    rep.verdict("reaches_nominal_level", c_star is not None, "calibrated_c")
    rep.tables["coverage"] = (["c", "coverage", "wilson_lo", "wilson_hi"], list(tab.rows()))
    return rep
