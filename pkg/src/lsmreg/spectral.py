"""SVD workspace: eigen-projection, Tikhonov filtering, and Picard export.

Everything downstream of the forward model runs in the spectral frame of
the noisy operator F = U diag(D) V*.  The Tikhonov minimizer of
``|F g - u|^2 + alpha |g|^2`` is

    g(alpha) = V diag(D_j / (alpha + D_j^2)) U* u,

with closed-form solution norm and residual

    |g|^2        = sum_j |p_j|^2 D_j^2   / (alpha + D_j^2)^2,
    |F g - u|^2  = sum_j |p_j|^2 alpha^2 / (alpha + D_j^2)^2,

where p = U* u is the projected pattern.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NumericalFailure, SingularOperator
from .forward import Operator, RhsLibrary

__all__ = [
    "Svd",
    "Projection",
    "TikhonovSolution",
    "decompose",
    "project",
    "tikhonov_solution",
    "export_picard",
]


@dataclass(frozen=True)
class Svd:
    """Full SVD of a square complex operator, F = U diag(D) V*.

    Columns of U and V are phase-fixed: the largest-modulus entry of each
    u_j is real positive, so decompositions agree across runs and BLAS
    implementations up to that convention.  D is real, nonnegative,
    descending.
    """

    U: np.ndarray
    D: np.ndarray
    V: np.ndarray

    @property
    def size(self) -> int:
        return self.D.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.D[None, :]) @ self.V.conj().T


@dataclass(frozen=True)
class Projection:
    """Eigen-projection p = U* u of one pattern; norm-preserving."""

    coeffs: np.ndarray

    @property
    def moduli_sq(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2


@dataclass(frozen=True)
class TikhonovSolution:
    g: np.ndarray
    g_norm2: float
    residual2: float


def _fix_phases(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate matched column pairs so each u column's peak entry is real > 0."""
    idx = np.argmax(np.abs(u), axis=0)
    peak = u[idx, np.arange(u.shape[1])]
    mod = np.abs(peak)
    phase = np.where(mod > 0, peak / np.where(mod > 0, mod, 1.0), 1.0)
    return u / phase[None, :], v / phase[None, :]


def decompose(op: Operator) -> Svd:
    """Full SVD of the operator with the package phase convention.

    Raises NumericalFailure on non-finite entries or LAPACK breakdown.
    """
    entries = op.entries
    if not np.all(np.isfinite(entries.view(float))):
        raise NumericalFailure("operator has non-finite entries")
    try:
        u, d, vh = np.linalg.svd(entries)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    v = vh.conj().T
    u, v = _fix_phases(u, v)
    return Svd(U=u, D=d, V=v)


def project(svd: Svd, rhs: np.ndarray) -> Projection:
    """Project a pattern onto the measurement eigenbasis: p = U* rhs."""
    rhs = np.asarray(rhs)
    if rhs.shape != (svd.size,):
        raise DimensionMismatch(f"rhs has shape {rhs.shape}, expected ({svd.size},)")
    return Projection(coeffs=svd.U.conj().T @ rhs)


def filter_factors(d: np.ndarray, alpha: float) -> np.ndarray:
    """Tikhonov spectral filters D_j / (alpha + D_j^2)."""
    return d / (alpha + d * d)


def solution_norms(d: np.ndarray, moduli_sq: np.ndarray, alpha: float) -> tuple[float, float]:
    """Closed-form (|g|^2, |F g - u|^2) at regularization alpha."""
    denom = (alpha + d * d) ** 2
    g_norm2 = float(np.sum(moduli_sq * d * d / denom))
    residual2 = float(np.sum(moduli_sq * alpha * alpha / denom))
    return g_norm2, residual2


def tikhonov_solution(svd: Svd, proj: Projection, alpha: float) -> TikhonovSolution:
    """Tikhonov minimizer and its norms at regularization alpha >= 0.

    alpha == 0 demands a strictly positive spectrum (SingularOperator
    otherwise).
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if proj.coeffs.shape != (svd.size,):
        raise DimensionMismatch("projection does not match decomposition size")
    if alpha == 0.0 and np.any(svd.D == 0.0):
        raise SingularOperator("alpha = 0 with a zero singular value")
    filt = filter_factors(svd.D, alpha)
    g = svd.V @ (filt * proj.coeffs)
    g_norm2, residual2 = solution_norms(svd.D, proj.moduli_sq, alpha)
    return TikhonovSolution(g=g, g_norm2=g_norm2, residual2=residual2)


def export_picard(svd: Svd, lib: RhsLibrary, path, pattern_indices=None) -> None:
    """Write Picard data as CSV: index j, D_jj, and |(u_j*, u_n)| columns.

    pattern_indices selects the library columns to include (default: all).
    """
    if lib.patterns.shape[0] != svd.size:
        raise DimensionMismatch("library patterns do not match decomposition size")
    if pattern_indices is None:
        pattern_indices = np.arange(lib.n_patterns)
    pattern_indices = np.asarray(pattern_indices, dtype=int)
    moduli = np.abs(svd.U.conj().T @ lib.patterns[:, pattern_indices])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "D"] + [f"abs_proj_n{n}" for n in pattern_indices])
        for j in range(svd.size):
            writer.writerow(
                [j, format(svd.D[j], ".17g")]
                + [format(moduli[j, c], ".17g") for c in range(len(pattern_indices))]
            )
