"""Inner loop of the LSA recursion.

Two interchangeable implementations of :func:`lsa_chunk` live here: a
numba ``@njit`` kernel written with explicit loops, and a plain numpy
version. The numba path is used when numba imports and the environment
variable ``POLYAK_LSA_DISABLE_NUMBA`` is unset (or ``0``); otherwise the
numpy path is used. Both consume the same pre-drawn chunk of oracle
samples, so they agree to rounding (they are not bit-identical because
the numpy path delegates matrix-vector products to BLAS).

Signature shared by both::

    status, norm, linf = lsa_chunk(A, b, A_bar, b_bar, theta, eta,
                                   acc, acc_c, nsum, nsum_c,
                                   out, record, guard)

``theta``, ``acc``/``acc_c`` (Kahan sum of iterates), ``nsum``/``nsum_c``
(Kahan sum of the noise e_{t+1}(theta_t)) are updated in place. ``status``
is -1 on success, else the chunk-local index of the step whose result
exceeded ``guard`` in l2 norm (``norm`` is that norm). ``linf`` is the
largest |theta|_inf seen among the iterates produced in this chunk.
"""

from __future__ import annotations

import math
import os

import numpy as np

__all__ = ["lsa_chunk", "lsa_chunk_numpy", "BACKEND", "numba_available"]


def _env_disabled() -> bool:
    return os.environ.get("POLYAK_LSA_DISABLE_NUMBA", "0").strip().lower() not in (
        "",
        "0",
        "false",
        "no",
    )


def lsa_chunk_numpy(A, b, A_bar, b_bar, theta, eta, acc, acc_c, nsum, nsum_c,
                    out, record, guard):
    n = b.shape[0]
    linf = 0.0
    guard2 = guard * guard
    for j in range(n):
        if record:
            out[j] = theta
        y = theta - acc_c
        s = acc + y
        acc_c[:] = (s - acc) - y
        acc[:] = s

        r = A[j] @ theta - b[j]
        e = (A[j] - A_bar) @ theta - (b[j] - b_bar)
        y = e - nsum_c
        s = nsum + y
        nsum_c[:] = (s - nsum) - y
        nsum[:] = s

        theta -= eta * r
        sq = float(theta @ theta)
        m = float(np.max(np.abs(theta)))
        if m > linf:
            linf = m
        if not sq <= guard2:
            return j, math.sqrt(sq), linf
    return -1, 0.0, linf


def _lsa_chunk_loops(A, b, A_bar, b_bar, theta, eta, acc, acc_c, nsum, nsum_c,
                     out, record, guard):
    n = b.shape[0]
    d = b.shape[1]
    r = np.empty(d)
    linf = 0.0
    guard2 = guard * guard
    for j in range(n):
        for i in range(d):
            x = theta[i]
            if record:
                out[j, i] = x
            y = x - acc_c[i]
            s = acc[i] + y
            acc_c[i] = (s - acc[i]) - y
            acc[i] = s
        for i in range(d):
            ri = -b[j, i]
            ei = -(b[j, i] - b_bar[i])
            for k in range(d):
                ri += A[j, i, k] * theta[k]
                ei += (A[j, i, k] - A_bar[i, k]) * theta[k]
            r[i] = ri
            y = ei - nsum_c[i]
            s = nsum[i] + y
            nsum_c[i] = (s - nsum[i]) - y
            nsum[i] = s
        sq = 0.0
        for i in range(d):
            v = theta[i] - eta * r[i]
            theta[i] = v
            sq += v * v
            if abs(v) > linf:
                linf = abs(v)
        if not sq <= guard2:
            return j, math.sqrt(sq), linf
    return -1, 0.0, linf


numba_available = False
lsa_chunk_numba = None
if not _env_disabled():
    try:
        from numba import njit

        lsa_chunk_numba = njit(cache=True, nogil=True)(_lsa_chunk_loops)
        numba_available = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

if numba_available:
    lsa_chunk = lsa_chunk_numba
    BACKEND = "numba"
else:
    lsa_chunk = lsa_chunk_numpy
    BACKEND = "numpy"


def get_kernel(backend: str | None = None):
    """Return the chunk kernel for ``backend`` ('numba', 'numpy' or None=default)."""
    if backend is None:
        return lsa_chunk
    if backend == "numpy":
        return lsa_chunk_numpy
    if backend == "numba":
        if lsa_chunk_numba is None:
            raise RuntimeError("numba backend requested but disabled or unavailable")
        return lsa_chunk_numba
    raise ValueError(f"unknown backend {backend!r}")
