"""Shared geometry: BEV/camera grids, token index maps, projections, bins.

Conventions (ego frame): x forward (meters), y left, z up.  The BEV grid
covers x in [x_min, x_max], y in [y_min, y_max] with row indexing x and
col indexing y.  The camera sits at (0, 0, cam_height) looking down +x
with a symmetric pinhole frustum (hfov/vfov).  The fused token sequence
is the flattened BEV grid followed by the flattened camera grid.
"""

from __future__ import annotations

import math

import numpy as np

from .config import GeometryConfig


def bev_cell(points: np.ndarray, geom: GeometryConfig) -> tuple[np.ndarray, np.ndarray]:
    """(..., 2+) ego points -> clamped (row, col) BEV indices; row bins x, col bins y."""
    pts = np.asarray(points, dtype=np.float64)
    rows = np.floor((pts[..., 0] - geom.x_min) / geom.bev_cell_x).astype(np.int64)
    cols = np.floor((pts[..., 1] - geom.y_min) / geom.bev_cell_y).astype(np.int64)
    return (np.clip(rows, 0, geom.bev_rows - 1), np.clip(cols, 0, geom.bev_cols - 1))


def cam_cell(points: np.ndarray, geom: GeometryConfig,
             near_clip: float = 0.1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(..., 3) ego points -> (row, col, flagged) camera grid indices.

    Pinhole at (0, 0, cam_height) looking +x: depth = x, image-right = -y,
    image-down = cam_height - z, normalized by the tangent of each half
    field of view.  Points behind the near plane or outside the frustum
    are flagged and clamped to the nearest valid cell.
    """
    pts = np.asarray(points, dtype=np.float64)
    depth = pts[..., 0]
    right = -pts[..., 1]
    down = geom.cam_height - pts[..., 2]
    tan_h = math.tan(math.radians(geom.cam_hfov_deg) / 2.0)
    tan_v = math.tan(math.radians(geom.cam_vfov_deg) / 2.0)
    safe_depth = np.maximum(depth, near_clip)
    u = right / (safe_depth * tan_h)
    v = down / (safe_depth * tan_v)
    flagged = (depth < near_clip) | (np.abs(u) > 1.0) | (np.abs(v) > 1.0)
    cols = np.floor((u + 1.0) / 2.0 * geom.cam_cols).astype(np.int64)
    rows = np.floor((v + 1.0) / 2.0 * geom.cam_rows).astype(np.int64)
    return (np.clip(rows, 0, geom.cam_rows - 1),
            np.clip(cols, 0, geom.cam_cols - 1),
            flagged)


def squash_reference(raw: np.ndarray, geom: GeometryConfig) -> np.ndarray:
    """Map unconstrained (..., 3) values smoothly into the scene volume."""
    raw = np.asarray(raw, dtype=np.float64)
    unit = 0.5 * (np.tanh(raw) + 1.0)
    lo = np.array([geom.x_min, geom.y_min, geom.z_min])
    hi = np.array([geom.x_max, geom.y_max, geom.z_max])
    return lo + unit * (hi - lo)


def token_grid_tables(geom: GeometryConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-token grid coordinates: (n_bev, 2) BEV rows/cols, (n_cam, 2) camera."""
    bev = np.stack(np.divmod(np.arange(geom.n_bev_tokens), geom.bev_cols), axis=1)
    cam = np.stack(np.divmod(np.arange(geom.n_cam_tokens), geom.cam_cols), axis=1)
    return bev, cam


def phi(u: int, geom: GeometryConfig) -> tuple[str, int, int]:
    """Token index -> ('bev'|'cam', row, col); total over [0, n_tokens)."""
    if u < 0 or u >= geom.n_tokens:
        raise IndexError(f"token index {u} outside [0, {geom.n_tokens})")
    if u < geom.n_bev_tokens:
        return ("bev", u // geom.bev_cols, u % geom.bev_cols)
    v = u - geom.n_bev_tokens
    return ("cam", v // geom.cam_cols, v % geom.cam_cols)


def distance_bin(dist: float, geom: GeometryConfig) -> int:
    """Index into the distance vocabulary: near < near_edge <= mid <= far_edge < far."""
    if dist < geom.near_edge:
        return 0
    if dist <= geom.far_edge:
        return 1
    return 2


def distance_range(bin_index: int, geom: GeometryConfig) -> tuple[float, float]:
    edges = (1.0, geom.near_edge, geom.far_edge, geom.obstacle_max_range)
    return edges[bin_index], edges[bin_index + 1]


_DIRECTION_DEG = {
    "front": (-15.0, 15.0),
    "front_left": (15.0, 45.0),
    "front_right": (-45.0, -15.0),
    "left": (45.0, 100.0),
    "right": (-100.0, -45.0),
}


def direction_bin(x: float, y: float) -> int:
    """Index into the direction vocabulary from the ego-frame bearing."""
    theta = math.degrees(math.atan2(y, x))
    if abs(theta) <= 15.0:
        return 0
    if 15.0 < theta <= 45.0:
        return 1
    if -45.0 <= theta < -15.0:
        return 2
    if theta > 45.0:
        return 3
    return 4


def direction_range(bin_index: int) -> tuple[float, float]:
    """Open sampling interval of bearings (degrees) for a direction bin."""
    from .vocab import DIRECTION
    return _DIRECTION_DEG[DIRECTION[bin_index]]
