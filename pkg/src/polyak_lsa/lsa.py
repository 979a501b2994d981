"""Constant step-size LSA with Polyak-Ruppert averaging.

The recursion is ``theta_{t+1} = theta_t - eta (A_{t+1} theta_t - b_{t+1})``
for ``t = 0 .. T-1``, and the reported average is
``theta_bar_T = (1/T) sum_{t=0}^{T-1} theta_t`` (theta_T itself is excluded).
Oracle samples are drawn in fixed-size chunks and fed to the compiled
kernel in :mod:`polyak_lsa._kernels`; the chunk size is part of the
reproducibility contract, so results are bit-identical for a given
(seed, chunk, backend).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import Diverged, MissingDiagnostics
from .oracles import Oracle, ProblemSpec, noise_model_for
from .rng import Streams, make_streams, replicate_streams
from .spectral import analyze, critical_step_size

__all__ = [
    "Schedule",
    "Record",
    "RunConfig",
    "Trajectory",
    "ReplicateStudy",
    "run",
    "run_coupled",
    "run_replicates",
    "telescope_residual",
    "resolve_eta",
]

DEFAULT_CHUNK = 4096


class Schedule(str, enum.Enum):
    CONSTANT = "Constant"
    CRITICAL_SQRT_T = "CriticalSqrtT"
    CUBE_ROOT_T = "CubeRootT"


@dataclass(frozen=True)
class Record:
    """What to keep from a run: 'final', 'average', 'full' or 'thinned' every k."""

    mode: str = "average"
    every: int = 1

    @classmethod
    def parse(cls, spec) -> "Record":
        if isinstance(spec, Record):
            return spec
        text = str(spec).strip().lower()
        aliases = {"finalonly": "final", "averageonly": "average", "fulltrajectory": "full"}
        text = aliases.get(text, text)
        if text in ("final", "average", "full"):
            return cls(text, 1)
        for prefix in ("thinned:", "thinned(", "thinned "):
            if text.startswith(prefix):
                k = int(text[len(prefix):].rstrip(")"))
                if k < 1:
                    raise ValueError("thinning interval must be >= 1")
                return cls("thinned", k)
        raise ValueError(f"unknown record mode {spec!r}")

    @property
    def keeps_iterates(self) -> bool:
        return self.mode in ("full", "thinned")

    def __str__(self) -> str:
        return f"thinned:{self.every}" if self.mode == "thinned" else self.mode


@dataclass(frozen=True)
class RunConfig:
    eta: float
    T: int
    theta0: np.ndarray | None = None
    seed: int = 0
    schedule: Schedule = Schedule.CONSTANT
    record: Record = field(default_factory=Record)
    overflow_guard: float = 1e12
    chunk: int = DEFAULT_CHUNK
    backend: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        object.__setattr__(self, "record", Record.parse(self.record))
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", np.atleast_1d(np.asarray(self.theta0, float)))
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if int(self.T) < 1:
            raise ValueError("T must be >= 1")
        object.__setattr__(self, "T", int(self.T))


@dataclass
class Trajectory:
    average: np.ndarray
    final: np.ndarray
    theta0: np.ndarray
    noise_sum: np.ndarray | None
    T_completed: int
    eta: float
    iterates: np.ndarray | None = None
    iterate_times: np.ndarray | None = None
    max_linf: float = 0.0
    certificate_violations: int = 0


@dataclass
class ReplicateStudy:
    T: int
    eta: float
    theta_star: np.ndarray | None
    per_replicate_avg: np.ndarray
    diverged: list[int]
    iterates: np.ndarray | None = None
    iterate_times: np.ndarray | None = None
    finals: np.ndarray | None = None
    certificate_violations: int = 0
    max_linf: float = 0.0

    @property
    def n_replicates(self) -> int:
        return int(self.per_replicate_avg.shape[0])

    @property
    def diverged_count(self) -> int:
        return len(self.diverged)

    @property
    def ok(self) -> np.ndarray:
        return np.all(np.isfinite(self.per_replicate_avg), axis=1)

    @property
    def scaled_errors(self) -> np.ndarray:
        """``sqrt(T) (theta_bar_T - theta*)`` for every non-diverged replicate."""
        if self.theta_star is None:
            raise ValueError("theta_star unknown for this problem")
        avg = self.per_replicate_avg[self.ok]
        return math.sqrt(self.T) * (avg - self.theta_star)

    @property
    def empirical_mean(self) -> np.ndarray:
        return self.scaled_errors.mean(axis=0)

    @property
    def empirical_cov(self) -> np.ndarray:
        z = self.scaled_errors
        if z.shape[0] < 2:
            return np.zeros((z.shape[1], z.shape[1]))
        return np.atleast_2d(np.cov(z, rowvar=False, ddof=1))

    def studentized(self, directions=None) -> np.ndarray:
        """t-statistics of the mean of ``v^T sqrt(T)(theta_bar - theta*)`` per direction."""
        z = self.scaled_errors
        V = np.eye(z.shape[1]) if directions is None else np.atleast_2d(directions)
        proj = z @ V.T
        sd = proj.std(axis=0, ddof=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = proj.mean(axis=0) / (sd / math.sqrt(proj.shape[0]))
        return np.where(sd > 0, t, 0.0)


def resolve_eta(problem: ProblemSpec, oracle: Oracle, config: RunConfig) -> float:
    """Step size actually used by ``config.schedule``.

    ``CubeRootT`` treats ``config.eta`` as a multiplier of ``T^{-1/3}``;
    ``CriticalSqrtT`` ignores it and uses the critical-case rule with the
    oracle's second-moment constant ``v_A``.
    """
    if config.schedule is Schedule.CONSTANT:
        return float(config.eta)
    if config.schedule is Schedule.CUBE_ROOT_T:
        return float(config.eta) * config.T ** (-1.0 / 3.0)
    info = analyze(problem.A_bar)
    nm = noise_model_for(oracle, make_streams(config.seed, 2**31 - 1))
    return critical_step_size(info, math.sqrt(nm.v_A2), config.T)


def _thin_rows(t0: int, n: int, every: int) -> np.ndarray:
    first = (-t0) % every
    return np.arange(first, n, every)


def _run_many(problem: ProblemSpec, oracle: Oracle, config: RunConfig,
              starts: list[np.ndarray], streams: Streams, eta: float,
              certify: bool = False) -> list[Trajectory]:
    """Run len(starts) chains driven by the same oracle draws."""
    if oracle.dimension != problem.dimension:
        raise ValueError("oracle and problem dimensions differ")
    kernel = _kernels.get_kernel(config.backend)
    d = problem.dimension
    A_bar = np.ascontiguousarray(problem.A_bar, dtype=float)
    b_bar = np.ascontiguousarray(problem.b_bar, dtype=float)
    T = config.T
    rec = config.record
    chains = []
    for th0 in starts:
        th0 = np.array(th0, dtype=float)
        chains.append({
            "theta0": th0.copy(),
            "theta": th0.copy(),
            "acc": np.zeros(d), "acc_c": np.zeros(d),
            "nsum": np.zeros(d), "nsum_c": np.zeros(d),
            "iters": [], "times": [],
            "linf": float(np.max(np.abs(th0))) if d else 0.0,
        })
    out = np.empty((min(config.chunk, T), d)) if rec.keeps_iterates else np.empty((1, d))
    violations = 0
    t0 = 0
    while t0 < T:
        n = min(config.chunk, T - t0)
        A, b = oracle.sample_batch(streams, n)
        A = np.ascontiguousarray(A, dtype=float)
        b = np.ascontiguousarray(b, dtype=float)
        if certify:
            violations += oracle.certify_batch(A, b)
        for ch in chains:
            status, norm, linf = kernel(A, b, A_bar, b_bar, ch["theta"], eta,
                                        ch["acc"], ch["acc_c"], ch["nsum"], ch["nsum_c"],
                                        out, rec.keeps_iterates, config.overflow_guard)
            if status >= 0:
                raise Diverged(t0 + int(status) + 1, float(norm), config.overflow_guard)
            ch["linf"] = max(ch["linf"], float(linf))
            if rec.keeps_iterates:
                rows = _thin_rows(t0, n, rec.every)
                ch["iters"].append(out[rows].copy())
                ch["times"].append(t0 + rows)
        t0 += n
    result = []
    for ch in chains:
        iterates = times = None
        if rec.keeps_iterates:
            iters, tms = ch["iters"], ch["times"]
            if T % rec.every == 0:
                iters.append(ch["theta"][None, :].copy())
                tms.append(np.array([T]))
            iterates = np.concatenate(iters, axis=0)
            times = np.concatenate(tms)
        result.append(Trajectory(
            average=(ch["acc"] - ch["acc_c"]) / T,
            final=ch["theta"].copy(),
            theta0=ch["theta0"],
            noise_sum=ch["nsum"] - ch["nsum_c"],
            T_completed=T,
            eta=eta,
            iterates=iterates,
            iterate_times=times,
            max_linf=ch["linf"],
            certificate_violations=violations,
        ))
    return result


def _theta0(problem: ProblemSpec, config: RunConfig) -> np.ndarray:
    if config.theta0 is None:
        return np.zeros(problem.dimension)
    if config.theta0.size != problem.dimension:
        raise ValueError("theta0 has the wrong dimension")
    return config.theta0


def run(problem: ProblemSpec, oracle: Oracle, config: RunConfig,
        streams: Streams | None = None, certify: bool = False,
        eta: float | None = None) -> Trajectory:
    """Run one LSA trajectory.

    Raises
    ------
    Diverged
        If some iterate leaves the ball of radius ``config.overflow_guard``.
    """
    streams = make_streams(config.seed) if streams is None else streams
    eta = resolve_eta(problem, oracle, config) if eta is None else float(eta)
    return _run_many(problem, oracle, config, [_theta0(problem, config)], streams, eta,
                     certify)[0]


def run_coupled(problem: ProblemSpec, oracle: Oracle, config: RunConfig,
                theta0_other, streams: Streams | None = None,
                eta: float | None = None) -> tuple[Trajectory, Trajectory]:
    """Two chains from different starts driven by identical oracle draws."""
    streams = make_streams(config.seed) if streams is None else streams
    eta = resolve_eta(problem, oracle, config) if eta is None else float(eta)
    starts = [_theta0(problem, config), np.asarray(theta0_other, float)]
    a, b = _run_many(problem, oracle, config, starts, streams, eta)
    return a, b


def _one_replicate(args):
    problem, oracle, config, i, eta, certify = args
    try:
        return run(problem, oracle, config, replicate_streams(config.seed, i), certify, eta)
    except Diverged as exc:
        return exc


def run_replicates(problem: ProblemSpec, oracle: Oracle, config: RunConfig,
                   n_replicates: int, threads: int | None = 1, certify: bool = False,
                   strict: bool = False) -> ReplicateStudy:
    """Independent replicates; replicate ``i`` uses streams keyed ``(seed, i)``.

    Diverged replicates are reported (NaN rows plus ``diverged`` indices)
    rather than raised, unless ``strict`` is set or every replicate diverged.
    """
    if n_replicates < 2:
        raise ValueError("need at least 2 replicates")
    eta = resolve_eta(problem, oracle, config)
    jobs = [(problem, oracle, config, i, eta, certify) for i in range(n_replicates)]
    if threads is None or threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_one_replicate, jobs))
    else:
        results = [_one_replicate(j) for j in jobs]

    d = problem.dimension
    avgs = np.full((n_replicates, d), np.nan)
    finals = np.full((n_replicates, d), np.nan)
    diverged = []
    iterates = times = None
    violations = 0
    linf = 0.0
    if config.record.keeps_iterates:
        first = next((r for r in results if isinstance(r, Trajectory)), None)
        if first is not None:
            iterates = np.full((n_replicates,) + first.iterates.shape, np.nan)
            times = first.iterate_times
    for i, res in enumerate(results):
        if isinstance(res, Diverged):
            diverged.append(i)
            if strict:
                raise res
            continue
        avgs[i] = res.average
        finals[i] = res.final
        violations += res.certificate_violations
        linf = max(linf, res.max_linf)
        if iterates is not None:
            iterates[i] = res.iterates
    if len(diverged) == n_replicates:
        raise results[0]
    return ReplicateStudy(
        T=config.T, eta=eta, theta_star=problem.theta_star,
        per_replicate_avg=avgs, diverged=diverged, iterates=iterates,
        iterate_times=times, finals=finals, certificate_violations=violations,
        max_linf=linf,
    )


def telescope_residual(traj: Trajectory, problem: ProblemSpec, eta: float | None = None) -> float:
    """l2 norm of ``A(theta_bar - theta*) - (theta0 - theta_T)/(eta T) + noise_sum / T``."""
    if traj.noise_sum is None:
        raise MissingDiagnostics("MissingDiagnostics: trajectory has no noise_sum")
    if problem.theta_star is None:
        raise ValueError("theta_star unknown for this problem")
    eta = traj.eta if eta is None else eta
    T = traj.T_completed
    r = (problem.A_bar @ (traj.average - problem.theta_star)
         - (traj.theta0 - traj.final) / (eta * T)
         + traj.noise_sum / T)
    return float(np.linalg.norm(r))
