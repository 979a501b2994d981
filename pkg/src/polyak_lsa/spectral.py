"""Eigen-analysis of the drift matrix.

:func:`analyze` classifies the drift matrix (Hurwitz / critical / unstable)
and builds a similarity ``A = U D U^{-1}`` whose Hermitian part
``D + D^H`` is bounded below by the spectral gap. For diagonalizable input
``U`` holds unit-norm eigenvectors and ``D`` is diagonal; for defective
input ``U`` holds rescaled Jordan chains, each block ``lam I + J`` becoming
``lam I + Re(lam / 2) J``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import Defective, NonFinite, NotHurwitz

__all__ = [
    "Regime",
    "SpectralInfo",
    "analyze",
    "hurwitz_step_bound",
    "stability_threshold",
    "critical_step_size",
    "toeplitz_block",
    "toeplitz_eigenvalues",
    "condition_number",
]

DIAG_TOL = 1e-8
CRITICAL_RTOL = 1e-9


class Regime(str, enum.Enum):
    HURWITZ = "Hurwitz"
    CRITICAL = "Critical"
    UNSTABLE = "Unstable"


@dataclass(frozen=True)
class SpectralInfo:
    eigenvalues: np.ndarray
    similarity_U: np.ndarray
    diagonal_D: np.ndarray
    spectral_gap: float
    spectral_radius: float
    condition_number: float
    regime: Regime
    diagonalizable: bool

    @property
    def dimension(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def min_abs_eigenvalue(self) -> float:
        return float(np.min(np.abs(self.eigenvalues)))

    @property
    def defective_critical(self) -> bool:
        """Flag (not an error): critical regime without a diagonalization."""
        return self.regime is Regime.CRITICAL and not self.diagonalizable

    def hermitian_part_min(self) -> float:
        D = self.diagonal_D
        return float(np.linalg.eigvalsh(D + D.conj().T)[0])

    def reconstruct(self) -> np.ndarray:
        U = self.similarity_U
        return U @ self.diagonal_D @ np.linalg.inv(U)


def condition_number(U: np.ndarray) -> float:
    """``||U|| * ||U^{-1}||`` in the operator 2-norm."""
    s = np.linalg.svd(U, compute_uv=False)
    if s[-1] == 0.0:
        return math.inf
    return float(s[0] / s[-1])


def _triangular_eigvecs(T: np.ndarray) -> np.ndarray:
    """Right eigenvectors of an upper-triangular complex matrix.

    Back-substitution on ``(T[:k,:k] - T[k,k] I) x = -T[:k,k]``; pivots
    below ``smallnum`` are replaced by ``smallnum`` as LAPACK's ztrevc does,
    which turns exactly repeated eigenvalues into (nearly) parallel vectors
    and lets the conditioning test flag the defect.
    """
    n = T.shape[0]
    X = np.zeros((n, n), dtype=complex)
    ulp = np.finfo(float).eps
    smallnum = max(ulp * np.max(np.abs(T)) if n else 0.0, np.finfo(float).tiny / ulp)
    for k in range(n):
        lam = T[k, k]
        x = np.zeros(n, dtype=complex)
        x[k] = 1.0
        for i in range(k - 1, -1, -1):
            s = T[i, i + 1 : k + 1] @ x[i + 1 : k + 1]
            piv = T[i, i] - lam
            if abs(piv) < smallnum:
                piv = smallnum
            x[i] = -s / piv
        X[:, k] = x / np.linalg.norm(x)
    return X


def _null_basis(M: np.ndarray, rtol: float, scale: float) -> np.ndarray:
    _, s, vh = np.linalg.svd(M)
    rank = int(np.sum(s > rtol * scale))
    return vh[rank:].conj().T


def _complement(within: np.ndarray, exclude: np.ndarray, count: int):
    """``count`` directions of span(within) independent of span(exclude)."""
    if count <= 0:
        return np.zeros((within.shape[0], 0), dtype=complex)
    if exclude.shape[1]:
        q, _ = np.linalg.qr(exclude)
        proj = within - q @ (q.conj().T @ within)
    else:
        proj = within
    u, _, _ = np.linalg.svd(proj, full_matrices=False)
    return u[:, :count]


def _cluster(eigs: np.ndarray, tol: float) -> list[list[int]]:
    order = sorted(range(len(eigs)), key=lambda i: (eigs[i].real, eigs[i].imag))
    clusters: list[list[int]] = []
    for i in order:
        for c in clusters:
            if any(abs(eigs[i] - eigs[j]) <= tol for j in c):
                c.append(i)
                break
        else:
            clusters.append([i])
    return clusters


def _jordan_similarity(A: np.ndarray, eigs: np.ndarray, tol: float):
    """Jordan chains with the block rescaling; returns (U, D) or None."""
    d = A.shape[0]
    rho = float(np.max(np.abs(eigs)))
    scale = max(1.0, rho)
    cols, blocks = [], []
    for members in _cluster(eigs, 1e-3 * scale):
        lam = complex(np.mean(eigs[members]))
        m = len(members)
        N = A.astype(complex) - lam * np.eye(d)
        nscale = max(1.0, np.linalg.norm(N, 2))
        kernels = [np.zeros((d, 0), dtype=complex)]
        Nk = np.eye(d, dtype=complex)
        for _ in range(m):
            Nk = N @ Nk
            kernels.append(_null_basis(Nk, tol, nscale ** len(kernels)))
            if kernels[-1].shape[1] >= m:
                break
        if kernels[-1].shape[1] != m:
            return None
        p = len(kernels) - 1
        nullity = [k.shape[1] for k in kernels]
        at_least = [0] + [nullity[k] - nullity[k - 1] for k in range(1, p + 1)] + [0]
        heads: list[tuple[np.ndarray, int]] = []
        for level in range(p, 0, -1):
            inherited = [np.linalg.matrix_power(N, L - level) @ v for v, L in heads]
            exclude = np.column_stack([kernels[level - 1]] + inherited) if inherited else kernels[level - 1]
            new = _complement(kernels[level], exclude, at_least[level] - at_least[level + 1])
            heads.extend((new[:, i], level) for i in range(new.shape[1]))
        c = (lam / 2).real
        if abs(c) <= CRITICAL_RTOL * scale:
            c = 1.0
        for v, size in heads:
            chain = [np.linalg.matrix_power(N, size - 1 - j) @ v for j in range(size)]
            q = np.array([c**j for j in range(size)])
            block = lam * np.eye(size, dtype=complex) + np.diag(np.full(size - 1, c), 1)
            cols.extend(chain[j] * q[j] for j in range(size))
            blocks.append(block)
    if len(cols) != d:
        return None
    return np.column_stack(cols), sla.block_diag(*blocks).astype(complex)


def analyze(A, tol: float = DIAG_TOL) -> SpectralInfo:
    """Spectral summary of the drift matrix ``A``.

    Parameters
    ----------
    A : array_like, shape (d, d)
        Real drift matrix.
    tol : float
        Diagonalizability threshold: eigenvector matrices with condition
        number at least ``1 / tol`` are treated as defective.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFinite("NonFinite: drift matrix contains NaN or Inf")

    T, Z = sla.schur(A.astype(complex), output="complex")
    eigs = np.diag(T).copy()
    V = Z @ _triangular_eigvecs(T)
    kappa_v = condition_number(V)
    diagonalizable = kappa_v < 1.0 / tol

    if diagonalizable:
        U = V
        D = np.diag(eigs)
    else:
        jordan = _jordan_similarity(A, eigs, tol)
        if jordan is None:
            # Rank decisions failed; fall back to a Schur-based similarity
            # with geometric rescaling of the strictly upper part.
            U, D = _schur_similarity(T, Z, eigs)
        else:
            U, D = jordan
        eigs = np.diag(D).copy()

    rho = float(np.max(np.abs(eigs)))
    gap = float(np.min(eigs.real))
    crit_tol = CRITICAL_RTOL * rho if rho > 0 else CRITICAL_RTOL
    if abs(gap) <= crit_tol:
        regime = Regime.CRITICAL
        gap = 0.0
    elif gap > 0:
        regime = Regime.HURWITZ
    else:
        regime = Regime.UNSTABLE

    return SpectralInfo(
        eigenvalues=eigs,
        similarity_U=U,
        diagonal_D=D,
        spectral_gap=gap,
        spectral_radius=rho,
        condition_number=max(1.0, condition_number(U)),
        regime=regime,
        diagonalizable=bool(diagonalizable),
    )


def _schur_similarity(T, Z, eigs):
    n = T.shape[0]
    gap = float(np.min(eigs.real))
    off = np.triu(T, 1)
    eps = 1.0
    if gap > 0 and np.any(off):
        eps = min(1.0, gap / (2.0 * np.linalg.norm(off, 2) * n))
    q = eps ** np.arange(n)
    D = (T / q[:, None]) * q[None, :]
    return Z * q[None, :], D


def _require_hurwitz(info: SpectralInfo) -> None:
    if info.regime is not Regime.HURWITZ:
        raise NotHurwitz(f"NotHurwitz: regime is {info.regime.value}")


def hurwitz_step_bound(info: SpectralInfo, sigma_A: float, alpha: float, T: int,
                       delta: float) -> float:
    """Largest admissible constant step for the non-asymptotic bound."""
    _require_hurwitz(info)
    if T < 1 or not 0.0 < delta < 1.0:
        raise ValueError("need T >= 1 and delta in (0, 1)")
    log_term = math.log(T / delta) ** (2 * alpha + 1)
    denom = info.spectral_radius**2 + info.condition_number**2 * sigma_A**2 * log_term
    return info.spectral_gap / denom


def stability_threshold(info: SpectralInfo, v_A: float) -> float:
    """``lam* / (rho^2 + kappa^2 v_A^2)``, the moment/mixing step range."""
    _require_hurwitz(info)
    return info.spectral_gap / (info.spectral_radius**2 + info.condition_number**2 * v_A**2)


def critical_step_size(info: SpectralInfo, v_A: float, T: int) -> float:
    if info.regime is Regime.UNSTABLE:
        raise NotHurwitz("NotHurwitz: regime is Unstable")
    if not info.diagonalizable:
        raise Defective("Defective: critical-case step size needs a diagonalizable drift")
    if T < 1:
        raise ValueError("need T >= 1")
    return 1.0 / ((info.spectral_radius + 3.0 * info.condition_number * v_A) * math.sqrt(T))


def toeplitz_block(k: int) -> np.ndarray:
    """Tridiagonal (1, 4, 1) matrix; a rescaled Jordan block's Hermitian part
    equals ``Re(lam) / 2`` times this."""
    return 4.0 * np.eye(k) + np.eye(k, k=1) + np.eye(k, k=-1)


def toeplitz_eigenvalues(k: int) -> np.ndarray:
    j = np.arange(1, k + 1)
    return np.sort(4.0 + 2.0 * np.cos(j * np.pi / (k + 1)))
