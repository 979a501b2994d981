"""Command-line entry point: ``polyak-lsa <command> --spec <file|example:name>``.

Everything written to stdout and to ``--out`` is deterministic for a given
(spec, seed). Timestamps go only to the sidecar ``run.log``.

Exit codes: 0 success, 1 acceptance failure, 2 spec/schema error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .builders import Setup, example_configs, load_setup
from .covariance import covariance_bundle
from .errors import LsaError, NumericError, SchemaError
from .experiments import (
    clt_study,
    counterexample_study,
    coverage_report,
    critical_rate_study,
    momentum_mixing_study,
    momentum_spectrum_study,
    td_study,
)
from .inference import deviation_terms, ellipse
from .lsa import Schedule, resolve_eta, run, run_replicates, telescope_residual
from .oracles import LinearTDOracle, MomentumOracle, noise_model_for
from .rng import make_streams
from .spectral import analyze

__all__ = ["main", "build_parser"]

COMMANDS = ("analyze", "run", "replicate", "covariance", "ellipse", "study", "validate")
NOISE_KEY = 2**31 - 2

log = logging.getLogger("polyak_lsa")
log.addHandler(logging.NullHandler())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="spec file, or example:<name> for a shipped config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the spec seed")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted-path spec override (repeatable)")
    p = argparse.ArgumentParser(prog="polyak-lsa", parents=[common],
                                description="Constant step-size LSA with iterate averaging.")
    p.add_argument("--list-examples", action="store_true", help="list shipped configs and exit")
    sub = p.add_subparsers(dest="command")
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "validate":
            sp.add_argument("--criteria", default=None,
                            help="comma-separated criterion numbers (default: all)")
    return p


# ------------------------------------------------------------------ helpers


def _emit(obj, out: Path | None, name: str) -> None:
    text = io.dumps(obj)
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    if out is not None:
        (out / name).write_text(text)


def _need(setup: Setup, attr: str, what: str):
    value = getattr(setup, attr)
    if value is None:
        raise SchemaError(attr if attr != "n_replicates" else "replicates",
                          f"required for {what}")
    return value


def _noise(setup: Setup):
    return noise_model_for(setup.oracle, make_streams(setup.seed, NOISE_KEY), setup.noise_samples)


def _spectral_json(info) -> dict:
    return {
        "eigenvalues": info.eigenvalues,
        "regime": info.regime.value,
        "spectral_gap": info.spectral_gap,
        "spectral_radius": info.spectral_radius,
        "condition_number": info.condition_number,
        "diagonalizable": info.diagonalizable,
        "defective_critical": info.defective_critical,
        "similarity_U": info.similarity_U,
        "diagonal_D": info.diagonal_D,
    }


# ----------------------------------------------------------------- commands


def cmd_analyze(setup: Setup, args, out):
    _emit(_spectral_json(analyze(setup.problem.A_bar)), out, "spectral.json")
    return 0


def cmd_run(setup: Setup, args, out):
    cfg = _need(setup, "run", "run")
    traj = run(setup.problem, setup.oracle, cfg)
    ts = setup.problem.theta_star
    summary = {
        "T": cfg.T,
        "T_completed": traj.T_completed,
        "eta": traj.eta,
        "seed": cfg.seed,
        "average": traj.average,
        "final": traj.final,
        "theta_star": ts,
        "avg_error_l2": None if ts is None else float(np.linalg.norm(traj.average - ts)),
        "final_error_l2": None if ts is None else float(np.linalg.norm(traj.final - ts)),
        "telescope_residual": None if ts is None else telescope_residual(traj, setup.problem),
        "max_linf": traj.max_linf,
    }
    if out is not None:
        io.trajectory_csv(out / "trajectory.csv", traj)
    _emit(summary, out, "summary.json")
    return 0


def cmd_replicate(setup: Setup, args, out):
    cfg = _need(setup, "run", "replicate")
    n = _need(setup, "n_replicates", "replicate")
    st = run_replicates(setup.problem, setup.oracle, cfg, n, threads=args.threads)
    _emit({
        "T": st.T,
        "eta": st.eta,
        "n_replicates": n,
        "theta_star": st.theta_star,
        "diverged": st.diverged,
        "scaled_error_mean": st.empirical_mean,
        "scaled_error_cov": st.empirical_cov,
        "per_replicate_avg": st.per_replicate_avg,
    }, out, "replicates.json")
    return 0


def _bundle_json(b, noise) -> dict:
    return {
        "eta": b.eta,
        "sigma_star": b.sigma_star,
        "lambda_eta": b.lambda_eta,
        "gamma_eta": b.gamma_eta,
        "classical": b.classical,
        "correction": b.correction,
        "residual": b.residual,
        "rcond": b.rcond,
        "noise_source": noise.source,
        "noise_samples": noise.n_samples,
    }


def cmd_covariance(setup: Setup, args, out):
    cfg = _need(setup, "run", "covariance (run.eta)")
    noise = _noise(setup)
    eta = resolve_eta(setup.problem, setup.oracle, cfg)
    _emit(_bundle_json(covariance_bundle(setup.problem, noise, eta), noise), out,
          "covariance.json")
    return 0


def cmd_ellipse(setup: Setup, args, out):
    cfg = _need(setup, "run", "ellipse")
    problem = setup.problem
    noise = _noise(setup)
    eta = resolve_eta(problem, setup.oracle, cfg)
    bundle = covariance_bundle(problem, noise, eta)
    theta0 = problem.theta_star * 0.0 if cfg.theta0 is None else cfg.theta0
    d = problem.dimension
    dev = deviation_terms(problem, analyze(problem.A_bar), noise, theta0, eta, cfg.T,
                          setup.delta / d)
    traj = run(problem, setup.oracle, cfg)
    E = ellipse(problem, bundle, dev, traj.average, c=setup.c, delta=setup.delta)
    _emit({
        "center": E.center,
        "shape_B": E.shape_B,
        "radius": E.radius,
        "c": E.c_constant,
        "delta": setup.delta,
        "T": cfg.T,
        "eta": eta,
        "V_theta": dev.V_theta,
        "Delta": dev.Delta,
        "distance_to_theta_star": float(E.norm(problem.theta_star)),
        "contains_theta_star": E.contains(problem.theta_star),
    }, out, "ellipse.json")
    return 0


def _study_report(setup: Setup, args):
    spec = setup.study
    if spec is None:
        raise SchemaError("study", "required for study")
    kind, p = spec["kind"], spec.get("params", {})
    problem, oracle, cfg, n = setup.problem, setup.oracle, setup.run, setup.n_replicates
    th = args.threads
    if kind == "counterexample":
        return counterexample_study(d=oracle.complex_dim, etas=tuple(p.get("etas", (0.01, 0.1, 1.0))),
                                    T_max=int(p.get("T_max", 1000)))
    if kind == "momentum_spectrum":
        return momentum_spectrum_study(p["base_eigs"], float(p["alpha"]), float(p["eta"]))
    cfg = _need(setup, "run", f"study {kind}")
    n = _need(setup, "n_replicates", f"study {kind}")
    if kind == "clt":
        return clt_study(problem, oracle, cfg.eta, cfg.T, n, directions=p.get("directions"),
                         seed=setup.seed, threads=th, noise=_noise(setup),
                         ratio_tol=float(p.get("ratio_tol", 0.15)), theta0=cfg.theta0)
    if kind == "critical_rate":
        return critical_rate_study(problem, oracle, p["T_grid"], n, seed=setup.seed,
                                   theta0=cfg.theta0, threads=th,
                                   eta_scale=float(p.get("eta_scale", 1.0)), noise=_noise(setup))
    if kind == "momentum_mixing":
        base = oracle.base if isinstance(oracle, MomentumOracle) else oracle
        alpha = float(p.get("alpha", getattr(oracle, "alpha", math.nan)))
        return momentum_mixing_study(base, alpha, cfg.eta, cfg.T, n, seed=setup.seed,
                                     theta0=None if cfg.theta0 is None else cfg.theta0[:base.dimension],
                                     threads=th)
    if kind == "td":
        features = oracle.features if isinstance(oracle, LinearTDOracle) else None
        eta = None if Schedule(cfg.schedule) is Schedule.CUBE_ROOT_T else cfg.eta
        return td_study(oracle.mrp, p["mode"], p["T_grid"], n, seed=setup.seed, eta=eta,
                        features=features, delta=setup.delta, threads=th)
    if kind == "coverage":
        return coverage_report(problem, oracle, cfg, p["c_grid"], n, setup.delta, threads=th,
                               noise=_noise(setup))
    raise SchemaError("study.kind", f"unknown study kind {kind!r}")


def cmd_study(setup: Setup, args, out):
    rep = _study_report(setup, args)
    if out is not None:
        path = rep.write(out)
        log.info("study written to %s", path)
    _emit(rep.to_dict(), None, "")
    return 0


def cmd_validate(args, out):
    from .acceptance import run_all

    for name in example_configs():
        load_setup(f"example:{name}")
    if args.spec:
        load_setup(args.spec, args.overrides, args.seed)
    numbers = None
    if args.criteria:
        numbers = [int(x) for x in args.criteria.split(",") if x.strip()]
    results = run_all(threads=args.threads, numbers=numbers,
                      echo=lambda line: print(line, file=sys.stderr))
    summary = {
        "passed": all(r.ok for r in results),
        "criteria": [{"number": r.number, "title": r.title, "passed": r.passed,
                      "within_budget": r.within_budget} for r in results],
    }
    if out is not None:
        for r in results:
            (out / f"criterion_{r.number:02d}.json").write_text(r.report)
    _emit(summary, out, "validate.json")
    return 0 if summary["passed"] else 1


HANDLERS = {
    "analyze": cmd_analyze,
    "run": cmd_run,
    "replicate": cmd_replicate,
    "covariance": cmd_covariance,
    "ellipse": cmd_ellipse,
    "study": cmd_study,
}


def _setup_logging(out: Path | None) -> logging.Handler | None:
    if out is None:
        return None
    h = logging.FileHandler(out / "run.log")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(h)
    log.setLevel(logging.INFO)
    return h


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_examples:
        for name, path in example_configs().items():
            print(f"example:{name}\t{io.read_json(path).get('description', '')}")
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    out = None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    handler = _setup_logging(out)
    log.info("command %s spec %s seed %s overrides %s", args.command, args.spec, args.seed,
             args.overrides)
    try:
        if args.command == "validate":
            code = cmd_validate(args, out)
        else:
            if not args.spec:
                raise SchemaError("--spec", "required")
            setup = load_setup(args.spec, args.overrides, args.seed)
            code = HANDLERS[args.command](setup, args, out)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        log.error("%s", exc)
        code = 2
    except (NumericError, LsaError, ValueError) as exc:
        name = type(exc).__name__
        msg = str(exc) if str(exc).startswith(name) else f"{name}: {exc}"
        print(f"error: {msg}", file=sys.stderr)
        log.error("%s", msg)
        code = 3
    log.info("exit %d", code)
    if handler is not None:
        log.removeHandler(handler)
        handler.close()
    return code


if __name__ == "__main__":
    raise SystemExit(main())
