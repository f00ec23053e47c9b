"""Desk-scale synthetic scattering model: operator, noise, and trial patterns.

A 2D scalar-wave Born model stands in for a full elastodynamic forward
solver.  Cracks are discretized as strings of point scatterers; the
scattering operator between a circular source/receiver array is assembled
from products of free-space Helmholtz kernels:

    F[j, i] = sum_q  tau_q * G(xi_j, z_q) * G(z_q, x_i)

with G the outgoing 2D Green's function (i/4) H0^(1)(k r) and
tau_q = crack_length / n_quad.  Trial patterns are dipole signatures,
i.e. directional derivatives of G at the sampling points.

Multiplicative measurement noise follows F_noisy = (I + N) F with N a
complex matrix whose real and imaginary parts are i.i.d. uniform on
[-delta, delta], drawn from a seeded 64-bit counter-based Philox stream
(real block first, then imaginary block, both in C order), so noisy
operators are bit-reproducible from (operator, delta, seed).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import hankel1

from .errors import CoincidentPoints

__all__ = [
    "Crack",
    "SceneConfig",
    "Operator",
    "RhsLibrary",
    "green",
    "grad_green",
    "build_operator",
    "add_noise",
    "build_rhs_library",
    "default_n_quad",
]


# ---------------------------------------------------------------------------
# Scene description
# ---------------------------------------------------------------------------
def default_n_quad(length: float, wavenumber: float) -> int:
    """Quadrature points for a crack: ceil(8 * length / wavelength), >= 1."""
    return max(1, math.ceil(8.0 * length * wavenumber / (2.0 * math.pi)))


@dataclass(frozen=True)
class Crack:
    """Straight crack segment modeled as point scatterers.

    Attributes
    ----------
    center : (float, float)
        Midpoint (x, y) of the segment.
    length : float
        Segment length, > 0.
    phi : float
        Orientation angle w.r.t. the x axis, radians.
    n_quad : int or None
        Number of point scatterers along the segment; None selects the
        eight-points-per-wavelength default.
    """

    center: tuple[float, float]
    length: float
    phi: float
    n_quad: int | None = None

    def quadrature(self, wavenumber: float) -> tuple[np.ndarray, float]:
        """Return (points (n,2), weight per point) for this segment.

        Points are midpoints of n_quad equal subsegments; each carries the
        constant Born contrast weight length / n_quad.
        """
        n = self.n_quad if self.n_quad is not None else default_n_quad(self.length, wavenumber)
        t = (np.arange(n) + 0.5) / n - 0.5
        direction = np.array([math.cos(self.phi), math.sin(self.phi)])
        pts = np.asarray(self.center) + self.length * t[:, None] * direction[None, :]
        return pts, self.length / n

    def endpoints(self) -> np.ndarray:
        """Segment endpoints, shape (2, 2)."""
        direction = np.array([math.cos(self.phi), math.sin(self.phi)])
        c = np.asarray(self.center, dtype=float)
        return np.stack([c - 0.5 * self.length * direction, c + 0.5 * self.length * direction])


@dataclass(frozen=True)
class SceneConfig:
    """Sensing configuration for one synthetic experiment.

    Attributes
    ----------
    half_width : float
        Half-width of the square sampling region, centered at the origin.
    sensor_radius : float
        Radius of the circle carrying the source/receiver grid; must
        exceed half_width * sqrt(2) so sampling points stay off the array.
    n_sensors : int
        Number of sensors (= sources); operator is n_sensors x n_sensors.
    wavenumber : float
        Scalar wavenumber k > 0.
    cracks : tuple of Crack
        Scatterers; supports must lie inside the sampling square.
    noise_delta : float
        Relative operator noise level, in [0, 1).
    rng_seed : int
        Master seed; sub-streams are documented where they are drawn.
    """

    half_width: float
    sensor_radius: float
    n_sensors: int
    wavenumber: float
    cracks: tuple[Crack, ...] = field(default_factory=tuple)
    noise_delta: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_sensors < 4:
            raise ValueError("n_sensors must be >= 4")
        if self.wavenumber <= 0:
            raise ValueError("wavenumber must be > 0")
        if not 0.0 <= self.noise_delta < 1.0:
            raise ValueError("noise_delta must lie in [0, 1)")
        if self.half_width <= 0:
            raise ValueError("half_width must be > 0")
        for crack in self.cracks:
            for pt in crack.endpoints():
                if np.max(np.abs(pt)) > self.half_width:
                    raise ValueError(f"crack support {tuple(pt)} outside sampling square")

    def sensors(self) -> np.ndarray:
        """Uniform sensor grid on the circle, shape (n_sensors, 2)."""
        theta = 2.0 * np.pi * np.arange(self.n_sensors) / self.n_sensors
        return self.sensor_radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)

    @property
    def wavelength(self) -> float:
        return 2.0 * np.pi / self.wavenumber


# ---------------------------------------------------------------------------
# Operator and pattern containers
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Operator:
    """Dense discretized scattering operator.

    entries is complex, square (n_sensors x n_sensors); is_noisy marks
    whether multiplicative noise of level delta has been applied.
    """

    entries: np.ndarray
    is_noisy: bool = False
    delta: float = 0.0

    def __post_init__(self):
        e = self.entries
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("operator must be a square matrix")
        if not np.all(np.isfinite(e.view(float))):
            raise ValueError("operator entries must be finite")

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class RhsLibrary:
    """Library of dipole trial patterns over a sampling grid.

    Column n = index_of(p, s) holds the signature of an infinitesimal
    dislocation at grid point p with unit normal s.

    Attributes
    ----------
    patterns : np.ndarray, complex, shape (n_sensors, n_points * n_orient)
    grid : np.ndarray, shape (n_points, 2)
        Sampling points, row-major over (iy, ix): p = iy * nx + ix.
    grid_shape : (int, int)
        (nx, ny) of the sampling grid.
    angles : np.ndarray, shape (n_orient,)
        Normal angles sampling the unit semicircle, theta_s = s*pi/n_orient.
    """

    patterns: np.ndarray
    grid: np.ndarray
    grid_shape: tuple[int, int]
    angles: np.ndarray

    @property
    def n_points(self) -> int:
        return self.grid.shape[0]

    @property
    def n_orientations(self) -> int:
        return self.angles.shape[0]

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[1]

    @property
    def orientations(self) -> np.ndarray:
        """Unit normals, shape (n_orient, 2)."""
        return np.stack([np.cos(self.angles), np.sin(self.angles)], axis=1)

    def index_of(self, p: int, s: int) -> int:
        """Column index of (sampling point p, orientation s)."""
        if not (0 <= p < self.n_points and 0 <= s < self.n_orientations):
            raise IndexError(f"(p={p}, s={s}) outside library")
        return p * self.n_orientations + s

    def point_orientation_of(self, n: int) -> tuple[int, int]:
        """Inverse of index_of."""
        if not 0 <= n < self.n_patterns:
            raise IndexError(f"pattern index {n} outside library")
        return divmod(n, self.n_orientations)


# ---------------------------------------------------------------------------
# Wave kernels
# ---------------------------------------------------------------------------
def _pairwise_r(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances between row sets a (m,2) and b (n,2), shape (m, n)."""
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(d * d, axis=2))


def green(x, y, k: float) -> complex:
    """Outgoing 2D Helmholtz Green's function (i/4) H0^(1)(k |x - y|).

    Raises CoincidentPoints when x == y.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = float(np.hypot(*(x - y)))
    if r == 0.0:
        raise CoincidentPoints("green() evaluated at coincident points")
    return complex(0.25j * hankel1(0, k * r))


def grad_green(x, y, k: float) -> np.ndarray:
    """Gradient of green(x, y, k) with respect to the second argument y.

    Returns the complex 2-vector -(i k / 4) H1^(1)(k r) (y - x) / r.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    r = float(np.hypot(*d))
    if r == 0.0:
        raise CoincidentPoints("grad_green() evaluated at coincident points")
    return (-0.25j * k * hankel1(1, k * r)) * d / r


def _green_matrix(a: np.ndarray, b: np.ndarray, k: float) -> np.ndarray:
    """Kernel matrix G(a_m, b_n), shape (len(a), len(b))."""
    r = _pairwise_r(a, b)
    if np.any(r == 0.0):
        raise CoincidentPoints("kernel matrix contains coincident point pairs")
    return 0.25j * hankel1(0, k * r)


# ---------------------------------------------------------------------------
# Operator assembly
# ---------------------------------------------------------------------------
def build_operator(cfg: SceneConfig) -> Operator:
    """Assemble the Born scattering operator for a scene.

    Sources and receivers share the sensor circle, so the output is
    complex-symmetric (F == F.T) by kernel reciprocity.  A scene without
    cracks yields the zero matrix.
    """
    sensors = cfg.sensors()
    m = cfg.n_sensors
    entries = np.zeros((m, m), dtype=complex)
    for crack in cfg.cracks:
        pts, tau = crack.quadrature(cfg.wavenumber)
        g_recv = _green_matrix(sensors, pts, cfg.wavenumber)  # (m, q)
        # reciprocal kernel: G(z_q, x_i) == G(x_i, z_q)
        entries += tau * (g_recv @ g_recv.T)
    return Operator(entries=entries, is_noisy=False, delta=0.0)


def add_noise(op: Operator, delta: float, seed: int) -> Operator:
    """Apply multiplicative noise (I + N) F with N ~ U(-delta, delta)^2.

    Deterministic for fixed (op, delta, seed): N's real block is drawn
    first, then the imaginary block, each of shape (m, m) in C order from
    numpy's Philox stream keyed by seed.  delta == 0 returns the entries
    unchanged.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if delta == 0.0:
        return Operator(entries=op.entries.copy(), is_noisy=True, delta=0.0)
    m = op.size
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.uniform(-delta, delta, (m, m)) + 1j * rng.uniform(-delta, delta, (m, m))
    entries = op.entries + noise @ op.entries
    return Operator(entries=entries, is_noisy=True, delta=delta)


# ---------------------------------------------------------------------------
# Trial-pattern library
# ---------------------------------------------------------------------------
def sampling_grid(half_width: float, nx: int, ny: int) -> np.ndarray:
    """Uniform inclusive grid over the sampling square, shape (nx*ny, 2).

    Row-major over (iy, ix): point p = iy * nx + ix.
    """
    xs = np.linspace(-half_width, half_width, nx)
    ys = np.linspace(-half_width, half_width, ny)
    gx, gy = np.meshgrid(xs, ys)  # gy varies along rows
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def build_rhs_library(cfg: SceneConfig, grid_nx: int, grid_ny: int, n_orientations: int) -> RhsLibrary:
    """Build the dipole pattern library over an nx-by-ny sampling grid.

    Pattern (p, s) evaluated at sensor xi_j is n_s . grad_y G(xi_j, y)
    at y = x_p, with normals sampling the unit semicircle at
    n_orientations equispaced angles.
    """
    if n_orientations < 1:
        raise ValueError("n_orientations must be >= 1")
    if grid_nx < 1 or grid_ny < 1:
        raise ValueError("grid must contain at least one point")
    sensors = cfg.sensors()
    grid = sampling_grid(cfg.half_width, grid_nx, grid_ny)
    k = cfg.wavenumber

    # (n_points, n_sensors) geometry
    d = grid[:, None, :] - sensors[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=2))
    if np.any(r == 0.0):
        raise CoincidentPoints("sampling point lies on the sensor circle")
    radial = (-0.25j * k * hankel1(1, k * r))[:, :, None] * d / r[:, :, None]

    angles = np.pi * np.arange(n_orientations) / n_orientations
    normals = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    # columns ordered n = p * n_orient + s
    cols = np.einsum("pjc,sc->psj", radial, normals)
    patterns = cols.reshape(grid.shape[0] * n_orientations, cfg.n_sensors).T
    return RhsLibrary(
        patterns=np.ascontiguousarray(patterns),
        grid=grid,
        grid_shape=(grid_nx, grid_ny),
        angles=angles,
    )
