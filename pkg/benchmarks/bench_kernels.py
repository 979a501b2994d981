"""Compare the numba and numpy LSA kernels.

Two timings per dimension: the chunk kernel alone on pre-drawn samples,
and a full ``run`` (sampling included). Prints one JSON object.

    python benchmarks/bench_kernels.py --T 200000 --dims 1 4 16
"""

from __future__ import annotations

import argparse
import json
import platform
import time

import numpy as np

from polyak_lsa import RunConfig, run
from polyak_lsa._kernels import get_kernel, numba_available
from polyak_lsa.oracles import GaussianOracle


def _instance(d: int) -> GaussianOracle:
    rng = np.random.default_rng(d)
    M = rng.standard_normal((d, d)) / np.sqrt(d)
    A = M @ M.T + np.eye(d)
    return GaussianOracle.isotropic(A, rng.standard_normal(d), a_std=0.1, b_std=1.0)


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def time_kernel(backend: str, oracle: GaussianOracle, n: int, eta: float, repeat: int) -> float:
    from polyak_lsa.rng import make_streams

    kernel = get_kernel(backend)
    A, b = oracle.sample_batch(make_streams(0, 0), n)
    d = oracle.dimension
    A_bar, b_bar = oracle.problem.A_bar, oracle.problem.b_bar
    out = np.empty((0, d))

    def go():
        z = np.zeros(d)
        kernel(A, b, A_bar, b_bar, z, eta, np.zeros(d), np.zeros(d), np.zeros(d), np.zeros(d),
               out, 0, 1e12)

    go()  # compile / warm up
    return _best(go, repeat)


def time_run(backend: str, oracle: GaussianOracle, T: int, eta: float, repeat: int) -> float:
    cfg = RunConfig(eta=eta, T=T, seed=1, backend=backend)
    run(oracle.problem, oracle, RunConfig(eta=eta, T=100, backend=backend))
    return _best(lambda: run(oracle.problem, oracle, cfg), repeat)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=int, default=200_000)
    p.add_argument("--dims", type=int, nargs="+", default=[1, 4, 16])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    backends = ["numpy"] + (["numba"] if numba_available else [])
    rows = []
    for d in args.dims:
        o = _instance(d)
        eta = 0.2 / np.linalg.norm(o.problem.A_bar, 2)
        n = min(args.T, 50_000)
        row = {"d": d, "T": args.T, "kernel_steps": n}
        for be in backends:
            row[f"kernel_{be}_s"] = time_kernel(be, o, n, eta, args.repeat)
            row[f"run_{be}_s"] = time_run(be, o, args.T, eta, args.repeat)
        if "numba" in backends:
            row["kernel_speedup"] = row["kernel_numpy_s"] / row["kernel_numba_s"]
            row["run_speedup"] = row["run_numpy_s"] / row["run_numba_s"]
        rows.append(row)
    print(json.dumps({"python": platform.python_version(), "numba": numba_available,
                      "results": rows}, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
