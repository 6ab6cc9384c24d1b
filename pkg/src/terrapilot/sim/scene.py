"""Ground-truth scene sampling.

A scene is drawn from a small causal graph so every label is both coherent
and recoverable downstream:

    weather -> illumination
    terrain -> difficulty
    obstacles -> availability, free_space_direction
    (difficulty, availability, free_space_direction) -> action   [deterministic]
    action -> future_trajectory                                   [margin-guarded]

``derive_action`` is a pure function, which makes the driving suggestion
decodable from the other fields, and trajectories are generated with
margins around the action-labeling thresholds (stop: path length well
under 1 m; straight: |final y| well under 2 m; turns: |final y| well over
2 m) so clustering-based relabeling agrees with the sampled action.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..config import SimConfig
from ..errors import DataError
from ..geometry import direction_bin, direction_range, distance_bin, distance_range
from ..vocab import (ACTION, AVAILABILITY, DIFFICULTY, DIRECTION, ILLUMINATION,
                     OBSTACLE_CATEGORY, TERRAIN, WEATHER, index_of)

N_TRAJ_POINTS = 20
TRAJ_DT = 0.5
HORIZON_INDICES = (1, 3, 9, 19)  # trajectory indices of the 1 / 2 / 5 / 10 s horizons


@dataclass
class Obstacle:
    category: str
    direction: str
    distance: str
    ego_xy: tuple[float, float]


@dataclass
class SceneState:
    weather: str
    illumination: str
    terrain: str
    difficulty: str
    availability: str
    free_space_direction: str
    obstacles: list[Obstacle]
    action: str
    future_trajectory: np.ndarray  # (20, 2) ego-frame meters at 0.5 s spacing
    speed: float = 0.0

    def to_dict(self) -> dict:
        return {
            "weather": self.weather,
            "illumination": self.illumination,
            "terrain": self.terrain,
            "difficulty": self.difficulty,
            "availability": self.availability,
            "free_space_direction": self.free_space_direction,
            "obstacles": [{"category": o.category, "direction": o.direction,
                           "distance": o.distance, "ego_xy": list(o.ego_xy)}
                          for o in self.obstacles],
            "action": self.action,
            "future_trajectory": self.future_trajectory.tolist(),
            "speed": self.speed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneState":
        try:
            obstacles = [Obstacle(o["category"], o["direction"], o["distance"],
                                  (float(o["ego_xy"][0]), float(o["ego_xy"][1])))
                         for o in d["obstacles"]]
            traj = np.asarray(d["future_trajectory"], dtype=np.float64)
            state = cls(weather=d["weather"], illumination=d["illumination"],
                        terrain=d["terrain"], difficulty=d["difficulty"],
                        availability=d["availability"],
                        free_space_direction=d["free_space_direction"],
                        obstacles=obstacles, action=d["action"],
                        future_trajectory=traj, speed=float(d.get("speed", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed scene record: {exc}") from exc
        if state.future_trajectory.shape != (N_TRAJ_POINTS, 2):
            raise DataError(
                f"future_trajectory shape {state.future_trajectory.shape} != (20, 2)")
        return state

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SceneState":
        return cls.from_dict(json.loads(text))


# Conditional tables of the causal graph.  Rows are parents, columns child
# probabilities in vocabulary order.

_ILLUM_GIVEN_WEATHER = {
    "sunny": (0.45, 0.45, 0.08, 0.02),
    "cloudy": (0.10, 0.55, 0.25, 0.10),
    "rainy": (0.02, 0.38, 0.35, 0.25),
    "snowy": (0.05, 0.45, 0.30, 0.20),
    "foggy": (0.02, 0.33, 0.35, 0.30),
}

_DIFF_GIVEN_TERRAIN = {
    "dirt": (0.55, 0.30, 0.10, 0.05),
    "gravel": (0.45, 0.35, 0.15, 0.05),
    "grass": (0.55, 0.30, 0.10, 0.05),
    "mud": (0.10, 0.35, 0.35, 0.20),
    "sand": (0.20, 0.40, 0.30, 0.10),
    "snow": (0.15, 0.35, 0.30, 0.20),
    "rock": (0.10, 0.30, 0.40, 0.20),
}

_AVAIL_GIVEN_COUNT = {
    0: (0.85, 0.13, 0.02),
    1: (0.55, 0.37, 0.08),
    2: (0.30, 0.55, 0.15),
    3: (0.15, 0.55, 0.30),
}

_FREE_DIR_PREFERENCE = (0.40, 0.18, 0.18, 0.12, 0.12)  # vocabulary order


def derive_action(difficulty: str, availability: str, free_space_direction: str) -> str:
    """Deterministic driving suggestion from the scene's traversability facts."""
    if difficulty == "impassable" or availability == "blocked":
        return "stop"
    if free_space_direction == "front":
        return "go_straight"
    if free_space_direction in ("front_left", "left"):
        return "turn_left"
    return "turn_right"


def _choice(rng: np.random.Generator, values: tuple[str, ...], weights) -> str:
    p = np.asarray(weights, dtype=np.float64)
    return values[int(rng.choice(len(values), p=p / p.sum()))]


def _sample_obstacle_point(rng: np.random.Generator, dir_idx: int, dist_idx: int,
                           geom) -> tuple[float, float]:
    """Rejection-free draw strictly inside a (direction, distance) bin."""
    lo_deg, hi_deg = direction_range(dir_idx)
    theta = math.radians(rng.uniform(lo_deg + 0.5, hi_deg - 0.5))
    lo_d, hi_d = distance_range(dist_idx, geom)
    dist = rng.uniform(lo_d + 0.25, hi_d - 0.25)
    return (dist * math.cos(theta), dist * math.sin(theta))


def synth_trajectory(action: str, speed: float, rng: np.random.Generator,
                     noise: float) -> np.ndarray:
    """A 20-point, 0.5 s-spaced ego trajectory realizing ``action``.

    Shapes keep hard margins around the relabeling thresholds: stop paths
    stay under ~0.3 m total, straight paths end with |y| < ~1.1 m, and
    turns end with |y| > ~4 m, so the cluster -> action mapping rule
    (path < 1 m, |y_final| vs 2 m) reproduces the action exactly.
    """
    t = TRAJ_DT * np.arange(1, N_TRAJ_POINTS + 1)
    if action == "stop":
        decay = np.exp(-1.5 * t)
        x = 0.12 * (1.0 - decay)
        y = 0.04 * (1.0 - decay) * rng.uniform(-1.0, 1.0)
    elif action == "go_straight":
        x = speed * t
        y = rng.uniform(-0.6, 0.6) * np.sin(t * rng.uniform(0.15, 0.35)) / 2.0
    else:
        omega = rng.uniform(0.07, 0.12)
        sign = 1.0 if action == "turn_left" else -1.0
        x = speed * np.sin(omega * t) / omega
        y = sign * speed * (1.0 - np.cos(omega * t)) / omega
    pts = np.stack([x, y], axis=1)
    wiggle = np.cumsum(rng.normal(0.0, noise * TRAJ_DT, size=(N_TRAJ_POINTS, 2)), axis=0)
    if action == "stop":
        wiggle *= 0.05
    return pts + wiggle


def sample_scene(seed: int, sim: SimConfig) -> SceneState:
    """Deterministic scene draw; ``sim.pin_*`` fields clamp a marginal."""
    rng = np.random.default_rng(seed)
    geom = sim.geometry

    weather = sim.pin_weather or _choice(rng, WEATHER, sim.weather_weights)
    illumination = sim.pin_illumination or _choice(
        rng, ILLUMINATION, _ILLUM_GIVEN_WEATHER[weather])
    terrain = sim.pin_terrain or _choice(rng, TERRAIN, sim.terrain_weights)
    difficulty = _choice(rng, DIFFICULTY, _DIFF_GIVEN_TERRAIN[terrain])

    n_obstacles = int(rng.choice(4, p=np.asarray(sim.obstacle_count_weights)
                                 / np.sum(sim.obstacle_count_weights)))
    dir_indices = sorted(rng.choice(len(DIRECTION), size=n_obstacles, replace=False))
    obstacles = []
    for dir_idx in dir_indices:
        dist_idx = int(rng.choice(3))
        xy = _sample_obstacle_point(rng, dir_idx, dist_idx, geom)
        assert direction_bin(*xy) == dir_idx and distance_bin(math.hypot(*xy), geom) == dist_idx
        obstacles.append(Obstacle(category=_choice(rng, OBSTACLE_CATEGORY,
                                                   np.ones(len(OBSTACLE_CATEGORY))),
                                  direction=DIRECTION[dir_idx],
                                  distance=("near", "mid", "far")[dist_idx],
                                  ego_xy=xy))

    availability = _choice(rng, AVAILABILITY, _AVAIL_GIVEN_COUNT[n_obstacles])
    occupied = {o.direction for o in obstacles}
    open_dirs = [d for d in DIRECTION if d not in occupied] or list(DIRECTION)
    open_weights = [_FREE_DIR_PREFERENCE[index_of("free_space_direction", d)]
                    for d in open_dirs]
    free_dir = _choice(rng, tuple(open_dirs), open_weights)

    if sim.pin_action:
        action = sim.pin_action
        difficulty, availability, free_dir = _rig_parents_for_action(action, rng)
    else:
        action = derive_action(difficulty, availability, free_dir)

    speed = float(rng.uniform(1.3, 2.2))
    trajectory = synth_trajectory(action, speed, rng, sim.traj_noise)
    return SceneState(weather=weather, illumination=illumination, terrain=terrain,
                      difficulty=difficulty, availability=availability,
                      free_space_direction=free_dir, obstacles=obstacles,
                      action=action, future_trajectory=trajectory, speed=speed)


def _rig_parents_for_action(action: str, rng: np.random.Generator) -> tuple[str, str, str]:
    """Parents consistent with a pinned action (keeps derive_action total)."""
    if action == "stop":
        return ("impassable", "blocked", "front")
    difficulty = _choice(rng, ("easy", "moderate", "hard"), np.ones(3))
    availability = _choice(rng, ("clear", "partially_blocked"), np.ones(2))
    free_dir = {"go_straight": "front",
                "turn_left": _choice(rng, ("front_left", "left"), np.ones(2)),
                "turn_right": _choice(rng, ("front_right", "right"), np.ones(2))}[action]
    return (difficulty, availability, free_dir)


def horizon_points(trajectory: np.ndarray) -> np.ndarray:
    """The (4, 2) waypoints at the 1 / 2 / 5 / 10 s horizons."""
    traj = np.asarray(trajectory, dtype=np.float64)
    return traj[list(HORIZON_INDICES)]
