"""Configuration dataclasses and the flat key=value config-file format.

Config files are plain text, one ``section.key = value`` per line, with
``#`` comments and ``include <relative-path>`` support.  Overrides are
applied last.  Unknown keys are rejected so that a typo cannot silently
fall back to a default.  Every run writes a resolved snapshot (sorted
lines) next to its outputs; the snapshot's sha256 is the config hash used
for dataset/checkpoint compatibility checks.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class GeometryConfig:
    """Grid geometry shared by the simulator and the routing bridge."""

    bev_rows: int = 16
    bev_cols: int = 16
    cam_rows: int = 12
    cam_cols: int = 20
    feat_dim: int = 64
    # Scene volume in the ego frame: x forward, y left, z up (meters).
    x_min: float = 0.0
    x_max: float = 32.0
    y_min: float = -16.0
    y_max: float = 16.0
    z_min: float = 0.0
    z_max: float = 4.0
    cam_height: float = 1.6
    cam_hfov_deg: float = 110.0
    cam_vfov_deg: float = 70.0
    # Radial distance bin edges (meters): near < mid_edge <= mid < far_edge <= far.
    near_edge: float = 8.0
    far_edge: float = 20.0
    obstacle_max_range: float = 30.0

    def __post_init__(self):
        if min(self.bev_rows, self.bev_cols, self.cam_rows, self.cam_cols, self.feat_dim) < 1:
            raise ConfigError("geometry extents must all be >= 1")

    @property
    def n_bev_tokens(self) -> int:
        return self.bev_rows * self.bev_cols

    @property
    def n_cam_tokens(self) -> int:
        return self.cam_rows * self.cam_cols

    @property
    def n_tokens(self) -> int:
        return self.n_bev_tokens + self.n_cam_tokens

    @property
    def bev_cell_x(self) -> float:
        return (self.x_max - self.x_min) / self.bev_rows

    @property
    def bev_cell_y(self) -> float:
        return (self.y_max - self.y_min) / self.bev_cols


@dataclass(frozen=True)
class SimConfig:
    """Synthetic-scene sampling marginals and feature-rendering knobs."""

    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    # Enum marginals. Pinning a value overrides its sampler entirely.
    weather_weights: tuple[float, ...] = (0.3, 0.25, 0.15, 0.15, 0.15)
    terrain_weights: tuple[float, ...] = (0.2, 0.15, 0.2, 0.12, 0.12, 0.09, 0.12)
    obstacle_count_weights: tuple[float, ...] = (0.25, 0.45, 0.20, 0.10)
    pin_weather: str = ""
    pin_illumination: str = ""
    pin_terrain: str = ""
    pin_action: str = ""
    # Feature rendering: fixed random-projection embedding + positional code.
    embed_seed: int = 2024
    positional_scale: float = 0.35
    observation_noise: float = 0.05
    # Trajectory generation.
    traj_noise: float = 0.08
    stop_path_limit: float = 1.0
    lateral_threshold: float = 2.0

    def __post_init__(self):
        for name, vocab_len in (
            ("weather_weights", 5),
            ("terrain_weights", 7),
            ("obstacle_count_weights", 4),
        ):
            w = getattr(self, name)
            if len(w) != vocab_len or any(x < 0 for x in w) or sum(w) <= 0:
                raise ConfigError(f"{name} must be {vocab_len} nonnegative weights")


@dataclass(frozen=True)
class ModelConfig:
    """Routing bridge + heads + planner dimensions."""

    query_dim: int = 64
    queries_per_task: int = 64
    pool_tokens: int = 4
    window_bev: int = 5
    window_cam: int = 5
    n_heads: int = 1
    expert_ffn_hidden: int = 128
    fuse_hidden: int = 128
    plan_latent: int = 64
    gru_hidden: int = 64
    waypoint_embed: int = 16
    n_modes: int = 3
    n_obstacle_slots: int = 3
    dtype: str = "float64"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.query_dim % self.n_heads != 0:
            raise ConfigError("query_dim must be divisible by n_heads")
        if min(self.window_bev, self.window_cam) < 1:
            raise ConfigError("mask window sizes must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    phase: int = 1
    epochs: int = 4
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # Phase-2 modality-dropout distribution over (camera blackout, lidar
    # blackout, no drop).  Router supervision assumes the three settings are
    # balanced, so phase 2 refuses any other schedule.
    drop_probs: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if self.phase not in (1, 2):
            raise ConfigError(f"phase must be 1 or 2, got {self.phase}")
        if len(self.drop_probs) != 3 or any(p < 0 for p in self.drop_probs) \
                or abs(sum(self.drop_probs) - 1.0) > 1e-9:
            raise ConfigError(
                f"drop_probs must be 3 non-negative values summing to 1, "
                f"got {self.drop_probs}")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; sections map to config-file key prefixes."""

    sim: SimConfig = field(default_factory=SimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def geometry(self) -> GeometryConfig:
        return self.sim.geometry


# --- flat key=value plumbing -------------------------------------------------

_SECTIONS = {
    "geometry": (GeometryConfig, ("sim", "geometry")),
    "sim": (SimConfig, ("sim",)),
    "model": (ModelConfig, ("model",)),
    "train": (TrainConfig, ("train",)),
}


def _coerce(raw: str, ftype, key: str):
    raw = raw.strip()
    if ftype is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected int, got {raw!r}") from None
    if ftype is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected float, got {raw!r}") from None
    if ftype is str:
        return raw
    if ftype is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected bool, got {raw!r}")
    # Tuple-of-float fields are written as comma-separated values.
    if "tuple" in str(ftype):
        try:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated floats, got {raw!r}") from None
    raise ConfigError(f"{key}: unsupported field type {ftype}")


def _section_fields(cls) -> dict:
    return {f.name: f for f in fields(cls) if f.name != "geometry"}


def parse_config_text(text: str, base_dir: Path | None = None) -> dict[str, str]:
    """Parse one config file into a flat ``section.key -> raw value`` dict."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            inc = line[len("include "):].strip()
            inc_path = (base_dir / inc) if base_dir is not None else Path(inc)
            if not inc_path.exists():
                raise ConfigError(f"include not found: {inc_path}")
            out.update(parse_config_text(inc_path.read_text(), inc_path.parent))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def build_config(entries: dict[str, str]) -> PipelineConfig:
    """Turn flat entries into a PipelineConfig, rejecting unknown keys."""
    per_section: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, raw in entries.items():
        if "." not in key:
            raise ConfigError(f"unknown config key {key!r} (keys are section.name)")
        section, _, name = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in key {key!r}")
        cls, _ = _SECTIONS[section]
        sec_fields = _section_fields(cls)
        if name not in sec_fields:
            raise ConfigError(f"unknown config key {key!r}")
        per_section[section][name] = _coerce(raw, _resolve_type(cls, name), key)
    geometry = GeometryConfig(**per_section["geometry"])
    sim = SimConfig(geometry=geometry, **per_section["sim"])
    model = ModelConfig(**per_section["model"])
    train = TrainConfig(**per_section["train"])
    return PipelineConfig(sim=sim, model=model, train=train)


def _resolve_type(cls, name: str):
    hints = {f.name: f.type for f in fields(cls)}
    t = hints[name]
    if isinstance(t, str):
        t = {"int": int, "float": float, "str": str, "bool": bool}.get(t, t)
    return t


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> PipelineConfig:
    """Load a config file (optional) and apply ``key=value`` overrides last."""
    entries: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        entries.update(parse_config_text(p.read_text(), p.parent))
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        key, _, value = ov.partition("=")
        entries[key.strip()] = value.strip()
    return build_config(entries)


def resolve_config(cfg: PipelineConfig) -> str:
    """Render the full resolved configuration as sorted key=value lines."""
    lines: list[str] = []

    def emit(section: str, obj) -> None:
        for f in fields(obj):
            if f.name == "geometry":
                continue
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ",".join(_fmt_float(x) for x in v)
            elif isinstance(v, float):
                v = _fmt_float(v)
            lines.append(f"{section}.{f.name} = {v}")

    emit("geometry", cfg.sim.geometry)
    emit("sim", cfg.sim)
    emit("model", cfg.model)
    emit("train", cfg.train)
    return "\n".join(sorted(lines)) + "\n"


def _fmt_float(x: float) -> str:
    return repr(float(x)) if not math.isnan(x) else "nan"


def config_hash(cfg: PipelineConfig, sections: tuple[str, ...] | None = None) -> str:
    """sha256 of the resolved snapshot, optionally restricted to sections."""
    text = resolve_config(cfg)
    if sections is not None:
        keep = [ln for ln in text.splitlines() if ln.split(".", 1)[0] in sections]
        text = "\n".join(keep) + "\n"
    return hashlib.sha256(text.encode()).hexdigest()


def sim_hash(cfg: PipelineConfig) -> str:
    """Hash of the data-generating part (geometry + sim)."""
    return config_hash(cfg, sections=("geometry", "sim"))


def replace(obj, **kwargs):
    """dataclasses.replace that tolerates frozen nested configs."""
    return dataclasses.replace(obj, **kwargs)
