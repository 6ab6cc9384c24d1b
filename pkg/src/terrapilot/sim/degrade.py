"""Sensor corruption: per-modality degradation specs and their application.

Blackout is the hard case the router is supervised on (it zeroes the
modality's token block and clears its availability flag); gaussian noise,
camera blur, and LiDAR sparsification are graded corruptions for
evaluation sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from .render import ModalityFeatureSet
from .scene import SceneState

CAMERA_KINDS = ("none", "gaussian_noise", "blur", "blackout")
LIDAR_KINDS = ("none", "gaussian_noise", "sparsify", "blackout")


@dataclass(frozen=True)
class DegradationSpec:
    camera: str = "none"
    camera_param: float = 0.0
    lidar: str = "none"
    lidar_param: float = 0.0

    def __post_init__(self):
        if self.camera not in CAMERA_KINDS:
            raise ConfigError(f"unknown camera degradation {self.camera!r}")
        if self.lidar not in LIDAR_KINDS:
            raise ConfigError(f"unknown lidar degradation {self.lidar!r}")
        if self.camera == "blackout" and self.lidar == "blackout":
            raise ConfigError("cannot black out both modalities")

    @property
    def is_clean(self) -> bool:
        return self.camera == "none" and self.lidar == "none"

    def to_dict(self) -> dict:
        return {"camera": self.camera, "camera_param": self.camera_param,
                "lidar": self.lidar, "lidar_param": self.lidar_param}

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        try:
            return cls(camera=d["camera"], camera_param=float(d["camera_param"]),
                       lidar=d["lidar"], lidar_param=float(d["lidar_param"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed degradation spec: {exc}") from exc

    def label(self) -> str:
        parts = []
        if self.camera != "none":
            parts.append(f"cam_{self.camera}" + (f"_{self.camera_param:g}"
                                                 if self.camera_param else ""))
        if self.lidar != "none":
            parts.append(f"lidar_{self.lidar}" + (f"_{self.lidar_param:g}"
                                                  if self.lidar_param else ""))
        return "+".join(parts) or "clean"


def _box_blur(grid: np.ndarray, radius: int) -> np.ndarray:
    """Apply an edge-padded (2r+1)^2 box filter to each channel."""
    if radius <= 0:
        return grid
    padded = np.pad(grid, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(grid)
    k = 2 * radius + 1
    for dr in range(k):
        for dc in range(k):
            out += padded[dr:dr + grid.shape[0], dc:dc + grid.shape[1]]
    return out / (k * k)


def apply_degradation(fs: ModalityFeatureSet, spec: DegradationSpec,
                      seed) -> ModalityFeatureSet:
    """Corrupt a feature set; blackout zeroes the block and clears its flag."""
    rng = np.random.default_rng(seed)
    out = fs.copy()
    if spec.camera == "gaussian_noise" and spec.camera_param > 0:
        out.camera = out.camera + rng.normal(0.0, spec.camera_param,
                                             size=out.camera.shape)
    elif spec.camera == "blur":
        out.camera = _box_blur(out.camera, int(spec.camera_param))
    elif spec.camera == "blackout":
        out.camera = np.zeros_like(out.camera)
        out.camera_present = False
    if spec.lidar == "gaussian_noise" and spec.lidar_param > 0:
        out.lidar_bev = out.lidar_bev + rng.normal(0.0, spec.lidar_param,
                                                   size=out.lidar_bev.shape)
    elif spec.lidar == "sparsify":
        keep = float(np.clip(spec.lidar_param, 0.0, 1.0))
        flat = out.lidar_bev.reshape(-1, out.lidar_bev.shape[-1]).copy()
        drop = rng.random(flat.shape[0]) >= keep
        flat[drop] = 0.0
        out.lidar_bev = flat.reshape(out.lidar_bev.shape)
    elif spec.lidar == "blackout":
        out.lidar_bev = np.zeros_like(out.lidar_bev)
        out.lidar_present = False
    return out


def sample_conditional_degradation(scene: SceneState,
                                   rng: np.random.Generator) -> DegradationSpec:
    """Corruption conditioned on the scene: bad light hits the camera harder,
    precipitation hits the LiDAR, so corruption correlates with labels."""
    p_cam = 0.15
    if scene.illumination in ("twilight", "darkness"):
        p_cam += 0.35
    if scene.weather in ("rainy", "foggy", "snowy"):
        p_cam += 0.20
    p_lidar = 0.10
    if scene.weather in ("rainy", "snowy"):
        p_lidar += 0.25
    camera, camera_param = "none", 0.0
    if rng.random() < p_cam:
        camera = ("gaussian_noise", "blur", "blackout")[int(rng.choice(3, p=(0.4, 0.3, 0.3)))]
        camera_param = {"gaussian_noise": float(rng.uniform(0.1, 0.6)),
                        "blur": float(rng.integers(1, 3)),
                        "blackout": 0.0}[camera]
    lidar, lidar_param = "none", 0.0
    if camera != "blackout" and rng.random() < p_lidar:
        lidar = ("gaussian_noise", "sparsify", "blackout")[int(rng.choice(3, p=(0.45, 0.35, 0.2)))]
        lidar_param = {"gaussian_noise": float(rng.uniform(0.1, 0.6)),
                       "sparsify": float(rng.uniform(0.3, 0.8)),
                       "blackout": 0.0}[lidar]
    return DegradationSpec(camera=camera, camera_param=camera_param,
                           lidar=lidar, lidar_param=lidar_param)
