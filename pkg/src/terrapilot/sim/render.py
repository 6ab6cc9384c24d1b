"""Deterministic feature rendering: SceneState -> modality token grids.

Each grid cell carries a small attribute vector; a frozen seeded random
projection lifts it to the model width and a fixed positional code plus
seeded observation noise are added.  Camera cells encode appearance
attributes (weather, illumination, obstacle categories), BEV cells encode
geometry attributes (terrain, difficulty, availability, free space,
obstacle layout, motion) — the asymmetry that gives modality routing a
reason to exist: appearance facts die with the camera, geometry facts die
with the LiDAR.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..config import SimConfig
from ..errors import ConfigError, DataError
from ..geometry import bev_cell, cam_cell, direction_bin
from ..vocab import (ACTION, AVAILABILITY, DIFFICULTY, DIRECTION, ILLUMINATION,
                     OBSTACLE_CATEGORY, TERRAIN, WEATHER, index_of)
from .scene import SceneState

N_SLOTS = 3
CAM_ATTR_DIM = len(WEATHER) + len(ILLUMINATION) + N_SLOTS * len(OBSTACLE_CATEGORY) + 1 + len(OBSTACLE_CATEGORY)
BEV_ATTR_DIM = (len(TERRAIN) + len(DIFFICULTY) + len(AVAILABILITY) + len(DIRECTION)
                + N_SLOTS * (1 + len(DIRECTION) + 3) + len(ACTION) + 1 + 1 + 1)


@dataclass
class ModalityFeatureSet:
    lidar_bev: np.ndarray    # (H_l, W_l, D)
    camera: np.ndarray       # (H_c, W_c, D)
    lidar_present: bool
    camera_present: bool

    @property
    def fused_tokens(self) -> np.ndarray:
        """(H_l*W_l + H_c*W_c, D) token sequence, LiDAR block first."""
        d = self.lidar_bev.shape[-1]
        return np.concatenate([self.lidar_bev.reshape(-1, d),
                               self.camera.reshape(-1, d)], axis=0)

    def routing_label(self) -> tuple[int, int, int]:
        """[1,0,0] LiDAR-only, [0,1,0] camera-only, [0,0,1] both present."""
        if self.lidar_present and self.camera_present:
            return (0, 0, 1)
        if self.lidar_present:
            return (1, 0, 0)
        if self.camera_present:
            return (0, 1, 0)
        raise DataError("record with neither modality present has no routing label")

    def copy(self) -> "ModalityFeatureSet":
        return ModalityFeatureSet(self.lidar_bev.copy(), self.camera.copy(),
                                  self.lidar_present, self.camera_present)


@dataclass(frozen=True)
class FeatureEmbedder:
    """Frozen projection matrices and positional codes for one sim config."""
    bev_proj: np.ndarray
    cam_proj: np.ndarray
    bev_pos: np.ndarray
    cam_pos: np.ndarray


def _positional_code(rows: int, cols: int, dim: int, scale: float,
                     rng: np.random.Generator) -> np.ndarray:
    """(rows, cols, dim) sinusoidal grid basis through a fixed projection."""
    r = (np.arange(rows) + 0.5) / rows
    c = (np.arange(cols) + 0.5) / cols
    rr, cc = np.meshgrid(r, c, indexing="ij")
    basis = np.stack([np.sin(2 * np.pi * rr), np.cos(2 * np.pi * rr),
                      np.sin(2 * np.pi * cc), np.cos(2 * np.pi * cc),
                      np.sin(4 * np.pi * rr), np.cos(4 * np.pi * rr),
                      np.sin(4 * np.pi * cc), np.cos(4 * np.pi * cc)], axis=-1)
    proj = rng.normal(0.0, 1.0 / np.sqrt(basis.shape[-1]), size=(basis.shape[-1], dim))
    return scale * (basis @ proj)


@lru_cache(maxsize=8)
def get_embedder(sim: SimConfig) -> FeatureEmbedder:
    geom = sim.geometry
    if geom.bev_rows <= 0 or geom.bev_cols <= 0 or geom.cam_rows <= 0 \
            or geom.cam_cols <= 0 or geom.x_max <= geom.x_min or geom.y_max <= geom.y_min:
        raise ConfigError("invalid geometry: empty grid or zero extents")
    rng = np.random.default_rng(sim.embed_seed)
    d = geom.feat_dim
    bev_proj = rng.normal(0.0, 1.0 / np.sqrt(BEV_ATTR_DIM), size=(BEV_ATTR_DIM, d))
    cam_proj = rng.normal(0.0, 1.0 / np.sqrt(CAM_ATTR_DIM), size=(CAM_ATTR_DIM, d))
    bev_pos = _positional_code(geom.bev_rows, geom.bev_cols, d, sim.positional_scale, rng)
    cam_pos = _positional_code(geom.cam_rows, geom.cam_cols, d, sim.positional_scale, rng)
    return FeatureEmbedder(bev_proj, cam_proj, bev_pos, cam_pos)


def scene_cam_attrs(scene: SceneState, sim: SimConfig) -> np.ndarray:
    """(H_c, W_c, CAM_ATTR_DIM) appearance attributes."""
    geom = sim.geometry
    attrs = np.zeros((geom.cam_rows, geom.cam_cols, CAM_ATTR_DIM))
    o = 0
    attrs[:, :, o + index_of("weather", scene.weather)] = 1.0
    o += len(WEATHER)
    attrs[:, :, o + index_of("illumination", scene.illumination)] = 1.0
    o += len(ILLUMINATION)
    for k, obstacle in enumerate(scene.obstacles[:N_SLOTS]):
        attrs[:, :, o + k * len(OBSTACLE_CATEGORY)
              + index_of("obstacle_category", obstacle.category)] = 1.0
    o += N_SLOTS * len(OBSTACLE_CATEGORY)
    occupancy_ch = o
    category_ch = o + 1
    for obstacle in scene.obstacles:
        x, y = obstacle.ego_xy
        row, col, flagged = cam_cell(np.array([x, y, 1.0]), geom)
        if not flagged:
            attrs[row, col, occupancy_ch] = 1.0
            attrs[row, col, category_ch + index_of("obstacle_category",
                                                   obstacle.category)] = 1.0
    return attrs


def scene_bev_attrs(scene: SceneState, sim: SimConfig) -> np.ndarray:
    """(H_l, W_l, BEV_ATTR_DIM) geometry attributes."""
    geom = sim.geometry
    attrs = np.zeros((geom.bev_rows, geom.bev_cols, BEV_ATTR_DIM))
    o = 0
    attrs[:, :, o + index_of("terrain", scene.terrain)] = 1.0
    o += len(TERRAIN)
    attrs[:, :, o + index_of("difficulty", scene.difficulty)] = 1.0
    o += len(DIFFICULTY)
    attrs[:, :, o + index_of("availability", scene.availability)] = 1.0
    o += len(AVAILABILITY)
    attrs[:, :, o + index_of("free_space_direction", scene.free_space_direction)] = 1.0
    o += len(DIRECTION)
    for k, obstacle in enumerate(scene.obstacles[:N_SLOTS]):
        base = o + k * (1 + len(DIRECTION) + 3)
        attrs[:, :, base] = 1.0
        attrs[:, :, base + 1 + index_of("obstacle_direction", obstacle.direction)] = 1.0
        attrs[:, :, base + 1 + len(DIRECTION)
              + index_of("obstacle_distance", obstacle.distance)] = 1.0
    o += N_SLOTS * (1 + len(DIRECTION) + 3)
    attrs[:, :, o + index_of("action", scene.action)] = 1.0
    o += len(ACTION)
    attrs[:, :, o] = scene.speed / 3.0
    o += 1
    occupancy_ch = o
    for obstacle in scene.obstacles:
        row, col = bev_cell(np.asarray(obstacle.ego_xy), geom)
        attrs[row, col, occupancy_ch] = 1.0
    o += 1
    centers_x = geom.x_min + (np.arange(geom.bev_rows) + 0.5) * geom.bev_cell_x
    centers_y = geom.y_min + (np.arange(geom.bev_cols) + 0.5) * geom.bev_cell_y
    free_idx = index_of("free_space_direction", scene.free_space_direction)
    for i, cx in enumerate(centers_x):
        for j, cy in enumerate(centers_y):
            if direction_bin(cx, cy) == free_idx:
                attrs[i, j, o] = 1.0
    return attrs


def render_features(scene: SceneState, sim: SimConfig, seed) -> ModalityFeatureSet:
    """Project attribute grids to model width; deterministic in (scene, seed)."""
    emb = get_embedder(sim)
    rng = np.random.default_rng(seed)
    bev = scene_bev_attrs(scene, sim) @ emb.bev_proj + emb.bev_pos
    cam = scene_cam_attrs(scene, sim) @ emb.cam_proj + emb.cam_pos
    bev = bev + rng.normal(0.0, sim.observation_noise, size=bev.shape)
    cam = cam + rng.normal(0.0, sim.observation_noise, size=cam.shape)
    return ModalityFeatureSet(lidar_bev=bev, camera=cam,
                              lidar_present=True, camera_present=True)
