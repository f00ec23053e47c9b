"""Flat-text run configuration.

Format: one ``section.key = value`` per line, ``#`` starts a comment,
blank lines ignored.  No nesting; values are scalars except
``scene.cracks`` which is a semicolon-separated list of
``x y length phi [n_quad]`` groups.

All randomness flows from ``scene.seed``: operator noise draws from
seed + 1 and network initialization from seed + 2.
"""

import math
from dataclasses import dataclass, field, replace

from .forward import Crack, SceneConfig
from .training import StopConfig, TrainConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    """Malformed configuration text; message carries line/field context."""


@dataclass(frozen=True)
class GridConfig:
    nx: int = 40
    ny: int = 40
    n_orientations: int = 8


@dataclass(frozen=True)
class MorozovConfig:
    eta0: float = 0.3
    tol: float = 1e-12


@dataclass(frozen=True)
class NetConfig:
    hidden1: int = 128
    hidden2: int = 64


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    emit_picard: bool = True
    emit_masks: bool = True


@dataclass(frozen=True)
class ImagingConfig:
    # None selects half the scene wavelength
    dilation_radius: float | None = None


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig
    grid: GridConfig = field(default_factory=GridConfig)
    morozov: MorozovConfig = field(default_factory=MorozovConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_m: int = 2
    output: OutputConfig = field(default_factory=OutputConfig)
    imaging: ImagingConfig = field(default_factory=ImagingConfig)

    @property
    def seed(self) -> int:
        return self.scene.rng_seed

    @property
    def noise_seed(self) -> int:
        return self.scene.rng_seed + 1

    @property
    def net_seed(self) -> int:
        return self.scene.rng_seed + 2

    def mask_radius(self) -> float:
        if self.imaging.dilation_radius is not None:
            return self.imaging.dilation_radius
        return 0.5 * self.scene.wavelength

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, scene=replace(self.scene, rng_seed=seed))

    def with_out_dir(self, directory: str) -> "RunConfig":
        return replace(self, output=replace(self.output, directory=directory))


# sampling square spans ten wavelengths at the default wavenumber
_DEFAULT_SCENE = dict(
    half_width=0.8,
    sensor_radius=1.45,
    n_sensors=64,
    wavenumber=10.0 * math.pi / 0.8,
    noise_delta=0.1,
    seed=7,
    cracks="-0.33 -0.62 0.3333333333333333 0.17453292519943295 40; "
           "0.21 -0.34 0.3333333333333333 0.9599310885968813 40; "
           "-0.21 0.22 0.25 1.0471975511965976 40",
)

DEFAULT_CONFIG = "\n".join(
    [f"scene.{k} = {v}" for k, v in _DEFAULT_SCENE.items()]
)


def _parse_cracks(text: str, line_no: int) -> tuple[Crack, ...]:
    cracks = []
    for group in text.split(";"):
        group = group.strip()
        if not group:
            continue
        parts = group.split()
        if len(parts) not in (4, 5):
            raise ConfigError(
                f"line {line_no}: crack needs 'x y length phi [n_quad]', got {group!r}"
            )
        try:
            x, y, length, phi = (float(p) for p in parts[:4])
            n_quad = int(parts[4]) if len(parts) == 5 else None
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad crack value in {group!r}: {exc}") from exc
        cracks.append(Crack(center=(x, y), length=length, phi=phi, n_quad=n_quad))
    return tuple(cracks)


def _parse_bool(raw: str, line_no: int, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"line {line_no}: {key} expects a boolean, got {raw!r}")


def _typed(raw: str, kind, line_no: int, key: str):
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: {key} expects {kind.__name__}, got {raw!r}") from exc


_SCHEMA = {
    "scene.half_width": float,
    "scene.sensor_radius": float,
    "scene.n_sensors": int,
    "scene.wavenumber": float,
    "scene.noise_delta": float,
    "scene.seed": int,
    "scene.cracks": "cracks",
    "grid.nx": int,
    "grid.ny": int,
    "grid.n_orientations": int,
    "morozov.eta0": float,
    "morozov.tol": float,
    "net.hidden1": int,
    "net.hidden2": int,
    "train.mode": str,
    "train.epoch1": int,
    "train.max_epochs2": int,
    "train.lr1": float,
    "train.lr2": float,
    "train.eta0": float,
    "train.epsilon": float,
    "train.alpha_norm": str,
    "train.sigma_a": float,
    "train.sigma_r": float,
    "train.n_rms": int,
    "train.min_window": int,
    "train.m": int,
    "output.directory": str,
    "output.emit_picard": bool,
    "output.emit_masks": bool,
    "imaging.dilation_radius": float,
}


def parse_config(text: str) -> RunConfig:
    """Parse configuration text into a validated RunConfig."""
    values: dict = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'section.key = value', got {raw_line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        kind = _SCHEMA[key]
        if kind == "cracks":
            values[key] = _parse_cracks(raw, line_no)
        elif kind is bool:
            values[key] = _parse_bool(raw, line_no, key)
        else:
            values[key] = _typed(raw, kind, line_no, key)

    def get(key, default):
        return values.get(key, default)

    try:
        scene = SceneConfig(
            half_width=get("scene.half_width", _DEFAULT_SCENE["half_width"]),
            sensor_radius=get("scene.sensor_radius", _DEFAULT_SCENE["sensor_radius"]),
            n_sensors=get("scene.n_sensors", _DEFAULT_SCENE["n_sensors"]),
            wavenumber=get("scene.wavenumber", _DEFAULT_SCENE["wavenumber"]),
            cracks=get("scene.cracks", _parse_cracks(_DEFAULT_SCENE["cracks"], 0)),
            noise_delta=get("scene.noise_delta", _DEFAULT_SCENE["noise_delta"]),
            rng_seed=get("scene.seed", _DEFAULT_SCENE["seed"]),
        )
    except ValueError as exc:
        raise ConfigError(f"scene: {exc}") from exc

    mode = get("train.mode", "informed")
    if mode not in ("basic", "informed"):
        raise ConfigError(f"train.mode must be 'basic' or 'informed', got {mode!r}")
    alpha_norm = get("train.alpha_norm", "global_max")
    if alpha_norm not in ("global_max", "per_sample"):
        raise ConfigError(f"train.alpha_norm must be 'global_max' or 'per_sample', got {alpha_norm!r}")

    try:
        stop = StopConfig(
            sigma_a=get("train.sigma_a", 1e-4),
            sigma_r=get("train.sigma_r", 5.0),
            n_rms=get("train.n_rms", 10000),
            min_window=get("train.min_window", 10),
        )
        train = TrainConfig(
            mode=mode,
            epoch1=values.get("train.epoch1"),
            max_epochs2=get("train.max_epochs2", 20000),
            lr1=values.get("train.lr1"),
            lr2=get("train.lr2", 5e-8),
            eta0=get("train.eta0", get("morozov.eta0", 0.3)),
            epsilon=get("train.epsilon", 1e-12),
            alpha_norm=alpha_norm,
            stop=stop,
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc

    return RunConfig(
        scene=scene,
        grid=GridConfig(
            nx=get("grid.nx", 40),
            ny=get("grid.ny", 40),
            n_orientations=get("grid.n_orientations", 8),
        ),
        morozov=MorozovConfig(
            eta0=get("morozov.eta0", 0.3),
            tol=get("morozov.tol", 1e-12),
        ),
        net=NetConfig(
            hidden1=get("net.hidden1", 128),
            hidden2=get("net.hidden2", 64),
        ),
        train=train,
        train_m=get("train.m", 2),
        output=OutputConfig(
            directory=get("output.directory", "out"),
            emit_picard=get("output.emit_picard", True),
            emit_masks=get("output.emit_masks", True),
        ),
        imaging=ImagingConfig(
            dilation_radius=values.get("imaging.dilation_radius"),
        ),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
