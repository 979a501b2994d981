"""Turn a validated spec dictionary into problem, oracle and run objects."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .io import as_array, load_spec
from .lsa import Record, RunConfig
from .oracles import (
    CounterexampleOracle,
    DeterministicOracle,
    ExactTDOracle,
    GaussianOracle,
    LinearTDOracle,
    MrpSpec,
    Oracle,
    ProblemSpec,
    RegressionOracle,
    counterexample_oracle,
    lift_momentum,
    minimax_oracle,
)

__all__ = ["Setup", "build", "build_oracle", "example_configs", "resolve_spec_path"]


@dataclass
class Setup:
    spec: dict
    problem: ProblemSpec
    oracle: Oracle
    seed: int
    run: RunConfig | None
    n_replicates: int | None
    delta: float
    c: float
    noise_samples: int
    study: dict | None


def _float(value, path: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise SchemaError(path, f"expected a number, got {value!r}") from None


def _array(value, path: str) -> np.ndarray:
    try:
        arr = as_array(value)
    except (TypeError, ValueError):
        raise SchemaError(path, "expected a rectangular numeric array") from None
    if not np.all(np.isfinite(arr)):
        raise SchemaError(path, "array entries must be finite")
    return arr


def _mrp(params: dict, path: str) -> MrpSpec:
    try:
        return MrpSpec(_array(params["P"], f"{path}.P"), _array(params["r"], f"{path}.r"),
                       _float(params["gamma"], f"{path}.gamma"))
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(path, str(exc)) from None


def build_oracle(ospec: dict, problem: ProblemSpec | None, path: str = "oracle") -> Oracle:
    kind = ospec["kind"]
    p = ospec.get("params", {})
    pp = f"{path}.params"
    try:
        if kind == "deterministic":
            return DeterministicOracle(problem)
        if kind == "gaussian":
            a_std = _float(p.get("a_std", 0.0), f"{pp}.a_std")
            if "b_cov" in p:
                if "b_std" in p:
                    raise SchemaError(f"{pp}.b_std", "give either b_std or b_cov, not both")
                return GaussianOracle(problem, a_std, _array(p["b_cov"], f"{pp}.b_cov"))
            b_std = _float(p.get("b_std", 0.0), f"{pp}.b_std")
            return GaussianOracle(problem, a_std, b_std**2 * np.eye(problem.dimension))
        if kind == "regression":
            x_cov = _array(p["x_cov"], f"{pp}.x_cov") if "x_cov" in p else None
            return RegressionOracle(_array(p["theta"], f"{pp}.theta"),
                                    _float(p.get("noise_std", 1.0), f"{pp}.noise_std"), x_cov)
        if kind == "counterexample":
            return counterexample_oracle(int(p["d"]))
        if kind == "minimax":
            return minimax_oracle(_array(p["payoff_P"], f"{pp}.payoff_P"),
                                  _array(p["c_x"], f"{pp}.c_x"), _array(p["c_y"], f"{pp}.c_y"),
                                  _float(p.get("noise_std", 0.0), f"{pp}.noise_std"))
        if kind == "td_exact":
            return ExactTDOracle(_mrp(p, pp), bool(p.get("center_rewards", False)))
        if kind == "td_linear":
            return LinearTDOracle(_mrp(p, pp), _array(p["features"], f"{pp}.features"))
        if kind == "momentum":
            base = build_oracle(p["base"], problem, f"{pp}.base")
            return lift_momentum(base, _float(p["alpha"], f"{pp}.alpha"),
                                 _float(p["eta"], f"{pp}.eta"))
    except SchemaError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SchemaError(path, f"{type(exc).__name__}: {exc}") from None
    raise SchemaError(f"{path}.kind", f"unknown oracle kind {kind!r}")


def build(spec: dict, seed: int | None = None) -> Setup:
    problem = None
    if "problem" in spec:
        ps = spec["problem"]
        A = _array(ps["matrix"], "problem.matrix")
        b = _array(ps["vector"], "problem.vector")
        ts = _array(ps["theta_star"], "problem.theta_star") if "theta_star" in ps else None
        try:
            problem = ProblemSpec.from_arrays(A, b, ts)
        except ValueError as exc:
            raise SchemaError("problem", str(exc)) from None
    oracle = build_oracle(spec["oracle"], problem)
    problem = oracle.problem
    seed = int(spec.get("seed", 0)) if seed is None else int(seed)

    cfg = None
    if "run" in spec:
        r = spec["run"]
        theta0 = _array(r["theta0"], "run.theta0") if "theta0" in r else None
        if theta0 is None and isinstance(oracle, CounterexampleOracle):
            theta0 = oracle.theta0
        if theta0 is not None and theta0.size != problem.dimension:
            raise SchemaError("run.theta0", f"expected {problem.dimension} entries, got {theta0.size}")
        guard = _float(r.get("overflow_guard", 1e12), "run.overflow_guard")
        try:
            cfg = RunConfig(
                eta=_float(r["eta"], "run.eta"),
                T=int(r["T"]),
                theta0=theta0,
                seed=seed,
                schedule=r.get("schedule", "Constant"),
                record=Record.parse(r.get("record", "average")),
                overflow_guard=guard if not math.isnan(guard) else 1e12,
                chunk=int(r.get("chunk", 4096)),
            )
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError("run", str(exc)) from None
    inf = spec.get("inference", {})
    delta = _float(inf.get("delta", 0.05), "inference.delta")
    if not 0.0 < delta < 1.0:
        raise SchemaError("inference.delta", "must lie in (0, 1)")
    return Setup(
        spec=spec,
        problem=problem,
        oracle=oracle,
        seed=seed,
        run=cfg,
        n_replicates=int(spec["replicates"]["n"]) if "replicates" in spec else None,
        delta=delta,
        c=_float(inf.get("c", 1.0), "inference.c"),
        noise_samples=int(spec.get("noise", {}).get("n_samples", 200_000)),
        study=spec.get("study"),
    )


def _config_dir():
    return resources.files("polyak_lsa") / "configs"


def example_configs() -> dict[str, Path]:
    """Shipped example specs, by name."""
    out = {}
    for entry in sorted(_config_dir().iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = Path(str(entry))
    return out


def resolve_spec_path(text: str) -> Path:
    """``example:<name>`` selects a shipped config; anything else is a file path."""
    if text.startswith("example:"):
        name = text.split(":", 1)[1]
        examples = example_configs()
        if name not in examples:
            raise SchemaError("--spec", f"unknown example {name!r}; see --list-examples")
        return examples[name]
    return Path(text)


def load_setup(text: str, overrides=(), seed: int | None = None) -> Setup:
    return build(load_spec(resolve_spec_path(text), overrides), seed)
