"""Binary artifact containers and raster emitters.

All containers are little-endian with a 4-byte ASCII magic and a u32
version. Complex entries are stored row-major as (f64 real, f64 imag).

RNOP  operator        : magic, version, rows u32, cols u32, entries.
RRHS  pattern library : RNOP layout + index block:
                        n_points u32, n_orient u32, grid_nx u32,
                        grid_ny u32, points as (x, y) f64 pairs,
                        orientation angles f64.
RSVD  cached SVD      : magic, version, n u32, U entries, D f64[n],
                        V entries.
RNCK  net checkpoint  : magic, version, input u32, h1 u32, h2 u32,
                        alpha_scale f64, u_scale f64, rng_seed i64,
                        parameter blocks f64 (W1, b1, W2, b2, w3, b3),
                        has_optim u8; when set: step u64, lr f64, then
                        first/second moment blocks in parameter order.

Rasters: images as 16-bit P5 PGM (big-endian samples per the format,
comment line carries the min/max used for quantization) plus lossless
CSV of raw values; masks as P4 PBM with defect bits set.
"""

import struct

import numpy as np

from .forward import Operator, RhsLibrary
from .network import OptimState, RegNet
from .spectral import Svd

__all__ = [
    "write_operator", "read_operator",
    "write_library", "read_library",
    "write_svd", "read_svd",
    "write_checkpoint", "read_checkpoint",
    "write_pgm", "write_pbm", "write_values_csv",
]

VERSION = 1

_MAGIC_OPERATOR = b"RNOP"
_MAGIC_LIBRARY = b"RRHS"
_MAGIC_SVD = b"RSVD"
_MAGIC_CHECKPOINT = b"RNCK"


def _complex_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a).astype("<c16").tobytes()


def _f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a).astype("<f8").tobytes()


class _Reader:
    def __init__(self, buf: bytes, magic: bytes, path):
        self.buf = buf
        self.pos = 0
        if self.take(4) != magic:
            raise ValueError(f"{path}: bad magic, expected {magic!r}")
        version = self.u32()
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")

    def take(self, n: int) -> bytes:
        out = self.buf[self.pos:self.pos + n]
        if len(out) != n:
            raise ValueError("truncated container")
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def complex_block(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(16 * n), dtype="<c16").reshape(shape).astype(complex)

    def f64_block(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(float)


# ---------------------------------------------------------------------------
# Operator / library / SVD
# ---------------------------------------------------------------------------
def write_operator(op: Operator, path) -> None:
    rows, cols = op.entries.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC_OPERATOR)
        fh.write(struct.pack("<III", VERSION, rows, cols))
        fh.write(_complex_bytes(op.entries))


def read_operator(path, is_noisy: bool = False, delta: float = 0.0) -> Operator:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), _MAGIC_OPERATOR, path)
    rows, cols = r.u32(), r.u32()
    return Operator(entries=r.complex_block((rows, cols)), is_noisy=is_noisy, delta=delta)


def write_library(lib: RhsLibrary, path) -> None:
    rows, cols = lib.patterns.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC_LIBRARY)
        fh.write(struct.pack("<III", VERSION, rows, cols))
        fh.write(_complex_bytes(lib.patterns))
        fh.write(struct.pack("<IIII", lib.n_points, lib.n_orientations,
                             lib.grid_shape[0], lib.grid_shape[1]))
        fh.write(_f64_bytes(lib.grid))
        fh.write(_f64_bytes(lib.angles))


def read_library(path) -> RhsLibrary:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), _MAGIC_LIBRARY, path)
    rows, cols = r.u32(), r.u32()
    patterns = r.complex_block((rows, cols))
    n_points, n_orient, nx, ny = r.u32(), r.u32(), r.u32(), r.u32()
    grid = r.f64_block((n_points, 2))
    angles = r.f64_block((n_orient,))
    return RhsLibrary(patterns=patterns, grid=grid, grid_shape=(nx, ny), angles=angles)


def write_svd(svd: Svd, path) -> None:
    n = svd.size
    with open(path, "wb") as fh:
        fh.write(_MAGIC_SVD)
        fh.write(struct.pack("<II", VERSION, n))
        fh.write(_complex_bytes(svd.U))
        fh.write(_f64_bytes(svd.D))
        fh.write(_complex_bytes(svd.V))


def read_svd(path) -> Svd:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), _MAGIC_SVD, path)
    n = r.u32()
    u = r.complex_block((n, n))
    d = r.f64_block((n,))
    v = r.complex_block((n, n))
    return Svd(U=u, D=d, V=v)


# ---------------------------------------------------------------------------
# Network checkpoints
# ---------------------------------------------------------------------------
def write_checkpoint(net: RegNet, path, optim: OptimState | None = None) -> None:
    h1, h2 = net.hidden_dims
    with open(path, "wb") as fh:
        fh.write(_MAGIC_CHECKPOINT)
        fh.write(struct.pack("<IIII", VERSION, net.input_dim, h1, h2))
        fh.write(struct.pack("<ddq", net.alpha_scale, net.u_scale, net.rng_seed))
        for p in net.params():
            fh.write(_f64_bytes(np.asarray(p, dtype=float)))
        if optim is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Qd", optim.step_count, optim.lr))
            for block in optim.m + optim.v:
                fh.write(_f64_bytes(block))


def read_checkpoint(path) -> tuple[RegNet, OptimState | None]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), _MAGIC_CHECKPOINT, path)
    input_dim, h1, h2 = r.u32(), r.u32(), r.u32()
    alpha_scale, u_scale, seed = r.f64(), r.f64(), r.i64()
    shapes = [(h1, input_dim), (h1,), (h2, h1), (h2,), (h2,), (1,)]
    blocks = [r.f64_block(s) for s in shapes]
    net = RegNet(W1=blocks[0], b1=blocks[1], W2=blocks[2], b2=blocks[3],
                 w3=blocks[4], b3=float(blocks[5][0]),
                 alpha_scale=alpha_scale, u_scale=u_scale, rng_seed=seed)
    if r.u8() == 0:
        return net, None
    step_count, lr = r.u64(), r.f64()
    optim = OptimState(lr=lr, step_count=step_count)
    optim.m = [r.f64_block(s) for s in shapes]
    optim.v = [r.f64_block(s) for s in shapes]
    return net, optim


# ---------------------------------------------------------------------------
# Rasters
# ---------------------------------------------------------------------------
def write_pgm(values: np.ndarray, path, vmin: float | None = None,
              vmax: float | None = None) -> None:
    """16-bit P5 PGM; the comment line records min/max for dequantization.

    Passing an explicit (vmin, vmax) lets a comparison group share one
    color scale.
    """
    v = np.asarray(values, dtype=float)
    lo = float(np.min(v)) if vmin is None else vmin
    hi = float(np.max(v)) if vmax is None else vmax
    span = hi - lo
    q = np.zeros_like(v) if span == 0 else np.clip((v - lo) / span, 0.0, 1.0)
    pixels = np.round(q * 65535).astype(">u2")
    ny, nx = v.shape
    header = f"P5\n# min={lo!r} max={hi!r}\n{nx} {ny}\n65535\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pixels.tobytes())


def write_pbm(mask: np.ndarray, path) -> None:
    """P4 PBM with set bits where mask is True."""
    m = np.asarray(mask, dtype=bool)
    ny, nx = m.shape
    packed = np.packbits(m, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{nx} {ny}\n".encode("ascii"))
        fh.write(packed.tobytes())


def write_values_csv(values: np.ndarray, path) -> None:
    """Lossless raster dump, one CSV row per grid row."""
    v = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        for row in v:
            fh.write(",".join(format(x, ".17g") for x in row))
            fh.write("\n")
