"""Run configuration: defaults, file parsing, flag overrides.

Config files are plain ``key = value`` lines (``#`` comments allowed).
Flags override the file, defaults fill the rest, and the effective
config is echoed into the run report so any run can be reproduced.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .exceptions import ConfigError

MODES = ("toy", "text", "image")

# The eight stock orbit angles: (azimuth, elevation) degrees.
DEFAULT_VIEW_ANGLES = "-180,15;-120,-15;-60,15;0,-15;60,15;120,-15;-180,-45;0,45"


@dataclass
class RunConfig:
    """Everything one texturing run depends on.

    ``renoise`` and ``init_noise`` have a single supported value each;
    they exist so the report records which synchronization variant
    produced a result (the alternatives are ablation points, not
    implemented behaviors).
    """

    mesh: str = ""
    orient: str = "x,y,z"
    mode: str = "toy"
    prompt: str = ""
    image: str = ""
    endpoint: str = ""
    out: str = "out"
    view_angles: str = DEFAULT_VIEW_ANGLES
    distance: float = 1.8
    fov_y: float = 45.0
    ddim_count: int = 30
    warp_steps: int = 24
    cfg_scale: float = 12.0
    image_scale: float = 0.6
    latent_size: int = 64
    latent_atlas: int = 256
    pixel_atlas: int = 1024
    weight_exponent: float = 2.0
    margin: int = 4
    eta: float = 0.0
    seed: int = 0
    workers: int = 1
    renoise: str = "eps_hat"
    init_noise: str = "per_view"

    def angles(self) -> list[tuple[float, float]]:
        """Parse the view_angles string into (azimuth, elevation) pairs."""
        pairs = []
        for chunk in self.view_angles.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split(",")
            if len(parts) != 2:
                raise ConfigError(
                    f"view_angles entry {chunk!r} is not 'azimuth,elevation'"
                )
            try:
                pairs.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise ConfigError(f"bad angle in view_angles entry {chunk!r}") from exc
        if not pairs:
            raise ConfigError("view_angles defines no views")
        return pairs

    def validate(self) -> None:
        if not self.mesh:
            raise ConfigError("mesh path is required (path or builtin:<name>)")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "text":
            if not self.endpoint:
                raise ConfigError("text mode requires an endpoint")
            if not self.prompt:
                raise ConfigError("text mode requires a prompt")
        if self.mode == "image":
            if not self.endpoint:
                raise ConfigError("image mode requires an endpoint")
            if not self.image:
                raise ConfigError("image mode requires an image path")
            if not self.prompt:
                raise ConfigError("image mode requires a prompt")
        if self.ddim_count < 1:
            raise ConfigError(f"ddim_count must be >= 1, got {self.ddim_count}")
        if not 0 <= self.warp_steps <= self.ddim_count:
            raise ConfigError(
                f"warp_steps ({self.warp_steps}) must lie in [0, ddim_count="
                f"{self.ddim_count}]"
            )
        if self.latent_size < 8:
            raise ConfigError(f"latent_size must be >= 8, got {self.latent_size}")
        for name in ("latent_atlas", "pixel_atlas"):
            if getattr(self, name) < 8:
                raise ConfigError(f"{name} must be >= 8, got {getattr(self, name)}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.weight_exponent < 0.0:
            raise ConfigError(
                f"weight_exponent must be >= 0, got {self.weight_exponent}"
            )
        if self.image_scale < 0.0:
            raise ConfigError(f"image_scale must be >= 0, got {self.image_scale}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.distance <= 0.0:
            raise ConfigError(f"distance must be > 0, got {self.distance}")
        if not 0.0 < self.fov_y < 180.0:
            raise ConfigError(f"fov_y must lie in (0, 180), got {self.fov_y}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.renoise != "eps_hat":
            raise ConfigError(
                f"renoise supports only 'eps_hat', got {self.renoise!r}"
            )
        if self.init_noise != "per_view":
            raise ConfigError(
                f"init_noise supports only 'per_view', got {self.init_noise!r}"
            )
        self.angles()

    def echo(self) -> dict:
        """Plain-dict snapshot for the run report."""
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} expects {kind}, got {raw!r}") from exc


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; later duplicates win."""
    values: dict[str, str] = {}
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"{path}:{line_no}: expected 'key = value', got {stripped!r}"
                )
            key, _, raw = stripped.partition("=")
            values[key.strip()] = raw.strip()
    return values


def parse_config(
    path: str | os.PathLike | None = None,
    overrides: dict[str, str] | None = None,
) -> RunConfig:
    """Build and validate a RunConfig from a file plus flag overrides."""
    merged: dict[str, str] = {}
    if path is not None:
        merged.update(read_config_file(path))
    if overrides:
        merged.update(overrides)

    config = RunConfig()
    for key, raw in merged.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, _convert(key, raw))
    config.validate()
    return config
