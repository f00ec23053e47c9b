"""Discrepancy-principle root finding for per-pattern regularization.

For a pattern with projection p = U* u and threshold eta, the solved
regularization parameter alpha is the root of

    disc(alpha) = sum_j (alpha^2 - eta^2 D_j^2) |p_j|^2 / (alpha + D_j^2)^2
                = |F g(alpha) - u|^2 - eta^2 |g(alpha)|^2,

i.e. the alpha at which the residual equals eta times the solution norm.
disc is strictly increasing on [0, inf) with derivative

    disc'(alpha) = sum_j 2 D_j^2 (alpha + eta^2) |p_j|^2 / (alpha + D_j^2)^3,

negative at alpha = 0+ and nonnegative at alpha = eta * max(D), so the
root is bracketed and bisection plus a Newton polish is reliable.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoRoot, NoSignal
from .forward import RhsLibrary
from .spectral import Projection, Svd

__all__ = [
    "RegMap",
    "discrepancy",
    "discrepancy_derivative",
    "solve_alpha",
    "build_regmap",
]

BISECT_MAX_ITER = 200
NEWTON_MAX_ITER = 60
BRACKET_CAP_FACTOR = 1e6
DEFAULT_TOL = 1e-12


# ---------------------------------------------------------------------------
# Scalar discrepancy function
# ---------------------------------------------------------------------------
def _disc_value(alpha: float, eta: float, d: np.ndarray, p2: np.ndarray) -> float:
    if alpha == 0.0:
        # continuous extension: modes with D == 0 contribute |p|^2 as alpha -> 0+
        with np.errstate(divide="ignore"):
            terms = np.where(d > 0.0, -(eta * eta) * p2 / np.where(d > 0.0, d * d, 1.0), p2)
        return float(np.sum(terms))
    denom = (alpha + d * d) ** 2
    return float(np.sum((alpha * alpha - (eta * d) ** 2) * p2 / denom))


def _disc_derivative(alpha: float, eta: float, d: np.ndarray, p2: np.ndarray) -> float:
    d2 = d * d
    return float(np.sum(2.0 * d2 * (alpha + eta * eta) * p2 / (alpha + d2) ** 3))


def discrepancy(alpha: float, eta: float, svd: Svd, proj: Projection) -> float:
    """Discrepancy functional residual^2 - eta^2 |g|^2 at alpha >= 0."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return _disc_value(alpha, eta, svd.D, proj.moduli_sq)


def discrepancy_derivative(alpha: float, eta: float, svd: Svd, proj: Projection) -> float:
    """d(discrepancy)/d(alpha); strictly positive whenever some p_j != 0.

    Also the per-pattern loss-balancing weight denominator used by the
    discrepancy-informed training loss.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return _disc_derivative(alpha, eta, svd.D, proj.moduli_sq)


def solve_alpha(eta: float, svd: Svd, proj: Projection, tol: float = DEFAULT_TOL) -> float:
    """Solve disc(alpha) = 0 for one pattern.

    Bracketed bisection on [0, hi] with hi doubled from eta^2 max(D)^2
    until disc(hi) >= 0, then Newton polish; the returned alpha satisfies
    |F g - u| = eta |g| at root-finding accuracy.  tol is the absolute
    tolerance on disc, normalized by sum |p_j|^2.

    Raises NoSignal for an all-zero projection and NoRoot when no
    bracket exists (bracket blow-up, zero spectrum, or null-space signal
    keeping the discrepancy positive for all alpha).
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    d = svd.D
    p2 = proj.moduli_sq
    s2 = float(np.sum(p2))
    if s2 == 0.0:
        raise NoSignal("projected pattern is identically zero")
    d_max = float(np.max(d)) if d.size else 0.0
    if d_max == 0.0:
        raise NoRoot("operator spectrum is identically zero")
    if _disc_value(0.0, eta, d, p2) >= 0.0:
        raise NoRoot("discrepancy is nonnegative for all alpha >= 0")

    hi = (eta * d_max) ** 2
    cap = BRACKET_CAP_FACTOR * d_max * d_max
    while _disc_value(hi, eta, d, p2) < 0.0:
        hi *= 2.0
        if hi > cap:
            raise NoRoot(f"bracket expansion exceeded {BRACKET_CAP_FACTOR:g} * max(D)^2")

    lo = 0.0
    alpha = hi
    scale = tol * s2
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        val = _disc_value(mid, eta, d, p2)
        if val >= 0.0:
            hi = mid
        else:
            lo = mid
        alpha = mid
        if abs(val) <= scale:
            break

    # Newton polish to near machine accuracy; disc is monotone increasing.
    for _ in range(NEWTON_MAX_ITER):
        deriv = _disc_derivative(alpha, eta, d, p2)
        if deriv <= 0.0:
            break
        step = _disc_value(alpha, eta, d, p2) / deriv
        new = alpha - step
        if new <= lo or new >= hi:
            new = min(max(new, 0.5 * (lo + alpha)), 0.5 * (alpha + hi))
        if abs(new - alpha) <= 1e-16 * max(abs(alpha), 1e-300):
            alpha = new
            break
        alpha = new
    return float(max(alpha, 0.0))


# ---------------------------------------------------------------------------
# Regularization maps
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RegMap:
    """Per-pattern regularization parameters over (part of) a library.

    alphas[i] belongs to library column pattern_indices[i]; flags marks
    no-signal patterns recorded as alpha = 0.  xy / phi / grid metadata
    mirror the library so maps are self-describing in CSV form.
    source tags provenance: "morozov", "net_step1", or "net_step2".
    """

    alphas: np.ndarray
    eta: float
    flags: np.ndarray
    pattern_indices: np.ndarray
    xy: np.ndarray
    phi: np.ndarray
    grid_shape: tuple[int, int]
    n_orientations: int
    source: str = "morozov"

    def __post_init__(self):
        if not np.all(np.isfinite(self.alphas)) or np.any(self.alphas < 0):
            raise ValueError("alphas must be finite and >= 0")

    @property
    def size(self) -> int:
        return self.alphas.shape[0]


def _library_metadata(lib: RhsLibrary, indices: np.ndarray):
    pts = np.asarray(indices) // lib.n_orientations
    orient = np.asarray(indices) % lib.n_orientations
    return lib.grid[pts], lib.angles[orient]


def build_regmap(eta: float, svd: Svd, lib: RhsLibrary, subset=None, tol: float = DEFAULT_TOL) -> RegMap:
    """Solve the discrepancy equation for every selected library column.

    subset is a sequence of pattern indices (default: the full library).
    No-signal patterns are recorded as alpha = 0 with their flag set
    instead of aborting; NoRoot propagates with the offending index.
    """
    if lib.patterns.shape[0] != svd.size:
        raise DimensionMismatch("library patterns do not match decomposition size")
    if subset is None:
        subset = np.arange(lib.n_patterns)
    subset = np.asarray(subset, dtype=int)
    proj_all = svd.U.conj().T @ lib.patterns[:, subset]
    p2_all = np.abs(proj_all) ** 2

    alphas = np.zeros(subset.shape[0])
    flags = np.zeros(subset.shape[0], dtype=bool)
    for i in range(subset.shape[0]):
        proj = Projection(coeffs=proj_all[:, i])
        try:
            alphas[i] = solve_alpha(eta, svd, proj, tol=tol)
        except NoSignal:
            alphas[i] = 0.0
            flags[i] = True
        except NoRoot as exc:
            raise NoRoot(f"pattern {int(subset[i])}: {exc}") from exc

    xy, phi = _library_metadata(lib, subset)
    return RegMap(
        alphas=alphas,
        eta=eta,
        flags=flags,
        pattern_indices=subset,
        xy=xy,
        phi=phi,
        grid_shape=lib.grid_shape,
        n_orientations=lib.n_orientations,
        source="morozov",
    )


def regmap_to_csv(regmap: RegMap, path) -> None:
    """Write a map as CSV with columns n, p, s, x, y, phi, alpha, flag."""
    ns = regmap.n_orientations
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "p", "s", "x", "y", "phi", "alpha", "flag"])
        for i in range(regmap.size):
            n = int(regmap.pattern_indices[i])
            writer.writerow(
                [
                    n,
                    n // ns,
                    n % ns,
                    format(regmap.xy[i, 0], ".17g"),
                    format(regmap.xy[i, 1], ".17g"),
                    format(regmap.phi[i], ".17g"),
                    format(regmap.alphas[i], ".17g"),
                    int(regmap.flags[i]),
                ]
            )


def regmap_from_csv(path, grid_shape: tuple[int, int], n_orientations: int,
                    eta: float, source: str = "morozov") -> RegMap:
    """Read a map written by regmap_to_csv."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(rec)
    n = len(rows)
    alphas = np.zeros(n)
    flags = np.zeros(n, dtype=bool)
    indices = np.zeros(n, dtype=int)
    xy = np.zeros((n, 2))
    phi = np.zeros(n)
    for i, rec in enumerate(rows):
        indices[i] = int(rec["n"])
        xy[i] = (float(rec["x"]), float(rec["y"]))
        phi[i] = float(rec["phi"])
        alphas[i] = float(rec["alpha"])
        flags[i] = bool(int(rec["flag"]))
    return RegMap(
        alphas=alphas,
        eta=eta,
        flags=flags,
        pattern_indices=indices,
        xy=xy,
        phi=phi,
        grid_shape=grid_shape,
        n_orientations=n_orientations,
        source=source,
    )
