"""Closed label vocabularies for the structured scene-description tasks.

Every categorical field in the pipeline (simulator labels, classification
heads, caption templates, metrics) draws from these tuples; entry order is
the canonical index order and doubles as the argmax tie-break order.
"""

from __future__ import annotations

WEATHER = ("sunny", "cloudy", "rainy", "snowy", "foggy")
ILLUMINATION = ("bright_light", "daylight", "twilight", "darkness")
TERRAIN = ("dirt", "gravel", "grass", "mud", "sand", "snow", "rock")
DIFFICULTY = ("easy", "moderate", "hard", "impassable")
AVAILABILITY = ("clear", "partially_blocked", "blocked")
DIRECTION = ("front", "front_left", "front_right", "left", "right")
OBSTACLE_CATEGORY = (
    "vehicle",
    "pedestrian",
    "animal",
    "rock",
    "tree",
    "pole",
    "building",
    "unknown",
)
DISTANCE = ("near", "mid", "far")
ACTION = ("go_straight", "turn_left", "turn_right", "stop")

PRESENT = ("absent", "present")

TASKS = ("weather", "drivable", "traversability", "obstacle", "suggestion")
LOCALIZED_TASKS = ("traversability", "obstacle", "suggestion")

# Scalar (non-slot) fields, keyed by the task whose tokens feed their head.
SCALAR_FIELDS = {
    "weather": ("weather", "illumination"),
    "drivable": ("availability", "free_space_direction"),
    "traversability": ("terrain", "difficulty"),
    "suggestion": ("action",),
}

FIELD_VOCABS = {
    "weather": WEATHER,
    "illumination": ILLUMINATION,
    "terrain": TERRAIN,
    "difficulty": DIFFICULTY,
    "availability": AVAILABILITY,
    "free_space_direction": DIRECTION,
    "action": ACTION,
    "obstacle_present": PRESENT,
    "obstacle_category": OBSTACLE_CATEGORY,
    "obstacle_direction": DIRECTION,
    "obstacle_distance": DISTANCE,
}


def index_of(field: str, value: str) -> int:
    vocab = FIELD_VOCABS[field]
    try:
        return vocab.index(value)
    except ValueError:
        raise ValueError(f"{value!r} is not in the {field} vocabulary {vocab}") from None
