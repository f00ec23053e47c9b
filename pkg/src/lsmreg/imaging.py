"""Indicator images, defect/background masks, and contrast metrics.

The sampling-method indicator at grid point p is 1 / |g_p|^2 where g_p
is the regularized solution of smallest norm over the trial orientations
at that point.  Image quality is scored Weber-style: indicator values in
a defect neighborhood are compared against the background rms.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyBackground
from .forward import RhsLibrary, SceneConfig
from .morozov import RegMap
from .spectral import Svd

__all__ = [
    "IndicatorImage",
    "RegionMask",
    "ContrastReport",
    "lsm_image",
    "build_masks",
    "contrast",
    "map_misfit",
]

NORM_FLOOR = 1e-30


@dataclass(frozen=True)
class IndicatorImage:
    """Positive indicator values on the sampling grid.

    values has shape (ny, nx) with rows following the grid's row-major
    (iy, ix) layout; provenance tags which regularization map produced it
    ("morozov", "net_step1", or "net_step2").
    """

    values: np.ndarray
    grid: np.ndarray
    grid_shape: tuple[int, int]
    provenance: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise ValueError("indicator values must be finite and > 0")


@dataclass(frozen=True)
class RegionMask:
    """Defect/background partition of the sampling grid."""

    defect: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        if self.defect.shape != self.background.shape:
            raise ValueError("mask grids must share a shape")
        if np.any(self.defect & self.background):
            raise ValueError("defect and background must be disjoint")
        if not np.all(self.defect | self.background):
            raise ValueError("defect and background must cover the grid")


@dataclass(frozen=True)
class ContrastReport:
    c_mean: float
    c_max: float

    def __post_init__(self):
        if not (self.c_max >= self.c_mean > 0):
            raise ValueError("contrast metrics must satisfy c_max >= c_mean > 0")


def lsm_image(svd: Svd, lib: RhsLibrary, regmap: RegMap) -> IndicatorImage:
    """Assemble the indicator image from a dense regularization map.

    Per point the solution norm is minimized over orientations; the
    indicator is the reciprocal squared norm, floored at 1e-30 to keep
    degenerate patterns finite.
    """
    if regmap.size != lib.n_patterns or not np.array_equal(
        regmap.pattern_indices, np.arange(lib.n_patterns)
    ):
        raise DimensionMismatch("regmap does not cover the full library")
    if lib.patterns.shape[0] != svd.size:
        raise DimensionMismatch("library patterns do not match decomposition size")

    ns = lib.n_orientations
    coeffs = svd.U.conj().T @ lib.patterns
    p2 = (np.abs(coeffs) ** 2).T.reshape(lib.n_points, ns, svd.size)
    alphas = regmap.alphas.reshape(lib.n_points, ns)
    d2 = svd.D * svd.D
    denom = (alphas[:, :, None] + d2[None, None, :]) ** 2
    gn2 = np.where(
        denom > 0.0,
        p2 * d2[None, None, :] / np.where(denom > 0.0, denom, 1.0),
        0.0,
    ).sum(axis=2)
    min_norm2 = np.maximum(gn2.min(axis=1), NORM_FLOOR)
    nx, ny = lib.grid_shape
    values = (1.0 / min_norm2).reshape(ny, nx)
    return IndicatorImage(values=values, grid=lib.grid, grid_shape=lib.grid_shape,
                          provenance=regmap.source)


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point to segment [a, b]."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def build_masks(cfg: SceneConfig, grid: np.ndarray, grid_shape: tuple[int, int],
                dilation_radius: float) -> RegionMask:
    """Partition the grid into defect (within dilation_radius of a crack
    segment) and background (everything else)."""
    if dilation_radius < 0:
        raise ValueError("dilation_radius must be >= 0")
    nx, ny = grid_shape
    defect = np.zeros(grid.shape[0], dtype=bool)
    for crack in cfg.cracks:
        a, b = crack.endpoints()
        defect |= _segment_distance(grid, a, b) <= dilation_radius
    defect = defect.reshape(ny, nx)
    return RegionMask(defect=defect, background=~defect)


def contrast(image: IndicatorImage, mask: RegionMask) -> ContrastReport:
    """Weber-style contrast: defect mean/max over background rms.

    Raises EmptyBackground when the background region is empty; an empty
    defect region is likewise rejected.
    """
    if mask.defect.shape != image.values.shape:
        raise DimensionMismatch("mask does not match image shape")
    if not np.any(mask.background):
        raise EmptyBackground("background region is empty")
    if not np.any(mask.defect):
        raise ValueError("defect region is empty")
    bg = image.values[mask.background]
    i_b = float(np.sqrt(np.mean(bg * bg)))
    defect = image.values[mask.defect]
    return ContrastReport(c_mean=float(np.mean(defect)) / i_b,
                          c_max=float(np.max(defect)) / i_b)


def map_misfit(map_a: RegMap, map_b: RegMap) -> np.ndarray:
    """Pointwise |alpha_a - alpha_b| over two maps on the same pattern set."""
    if map_a.size != map_b.size or not np.array_equal(
        map_a.pattern_indices, map_b.pattern_indices
    ):
        raise DimensionMismatch("maps cover different pattern sets")
    return np.abs(map_a.alphas - map_b.alphas)


def contrast_to_csv(reports: list[tuple[str, ContrastReport]], path) -> None:
    """Write contrast rows (tag, C_mn, C_mx)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tag", "C_mn", "C_mx"])
        for tag, rep in reports:
            writer.writerow([tag, format(rep.c_mean, ".17g"), format(rep.c_max, ".17g")])
