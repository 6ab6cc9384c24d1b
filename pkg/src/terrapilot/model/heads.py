"""Closed-vocabulary structured decoding and deterministic caption rendering.

Each scene field gets a linear classification head over its task's
mean-pooled output tokens.  Obstacles use a fixed number of slots in
canonical order (sorted by direction-vocabulary index); absent slots are
masked out of the loss and suppress their caption sentence.  Inference is
pure argmax with ties resolved toward the earlier vocabulary entry, and
captions are frozen sentence frames shared by predictions and references,
so caption metrics reduce to field correctness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ModelConfig
from ..errors import DimensionError
from ..sim.scene import SceneState
from ..vocab import FIELD_VOCABS, SCALAR_FIELDS, TASKS, index_of
from ..nn import layers as L
from ..nn import tensor as T
from ..nn.layers import ParamStore
from ..nn.tensor import Tensor

SLOT_ATTRS = ("category", "direction", "distance")


@dataclass
class ObstacleSlot:
    present: bool
    category: str
    direction: str
    distance: str


@dataclass
class StructuredAnswerSet:
    weather: str
    illumination: str
    availability: str
    free_space_direction: str
    terrain: str
    difficulty: str
    action: str
    obstacle_slots: list[ObstacleSlot]

    def to_dict(self) -> dict:
        return {
            "weather": self.weather, "illumination": self.illumination,
            "availability": self.availability,
            "free_space_direction": self.free_space_direction,
            "terrain": self.terrain, "difficulty": self.difficulty,
            "action": self.action,
            "obstacle_slots": [{"present": s.present, "category": s.category,
                                "direction": s.direction, "distance": s.distance}
                               for s in self.obstacle_slots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredAnswerSet":
        slots = [ObstacleSlot(s["present"], s["category"], s["direction"], s["distance"])
                 for s in d["obstacle_slots"]]
        return cls(weather=d["weather"], illumination=d["illumination"],
                   availability=d["availability"],
                   free_space_direction=d["free_space_direction"],
                   terrain=d["terrain"], difficulty=d["difficulty"],
                   action=d["action"], obstacle_slots=slots)

    @classmethod
    def from_scene(cls, scene: SceneState, n_slots: int) -> "StructuredAnswerSet":
        """Ground-truth answers with canonically ordered obstacle slots."""
        ordered = sorted(scene.obstacles,
                         key=lambda o: index_of("obstacle_direction", o.direction))
        slots = []
        for k in range(n_slots):
            if k < len(ordered):
                o = ordered[k]
                slots.append(ObstacleSlot(True, o.category, o.direction, o.distance))
            else:
                slots.append(ObstacleSlot(False, FIELD_VOCABS["obstacle_category"][0],
                                          FIELD_VOCABS["obstacle_direction"][0],
                                          FIELD_VOCABS["obstacle_distance"][0]))
        return cls(weather=scene.weather, illumination=scene.illumination,
                   availability=scene.availability,
                   free_space_direction=scene.free_space_direction,
                   terrain=scene.terrain, difficulty=scene.difficulty,
                   action=scene.action, obstacle_slots=slots)


def vocab_name_of(field: str) -> str:
    """Vocabulary key for a head field ('obstacle0_category' -> 'obstacle_category')."""
    if field.startswith("obstacle") and field[len("obstacle")].isdigit():
        return "obstacle_" + field.split("_", 1)[1]
    return field


def _field_head_names(cfg: ModelConfig):
    """Yields (head name, task, vocab name) for all classification heads."""
    for task, fields in SCALAR_FIELDS.items():
        for fname in fields:
            yield (f"head.{fname}", task, fname)
    for k in range(cfg.n_obstacle_slots):
        yield (f"head.obstacle{k}_present", "obstacle", "obstacle_present")
        for attr in SLOT_ATTRS:
            yield (f"head.obstacle{k}_{attr}", "obstacle", f"obstacle_{attr}")


def init_head_params(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    for name, _task, vocab_name in _field_head_names(cfg):
        L.init_linear(store, name, cfg.query_dim, len(FIELD_VOCABS[vocab_name]), rng)


def head_logits(store: ParamStore, cfg: ModelConfig,
                task_tokens: dict[str, Tensor]) -> dict[str, Tensor]:
    """Per-field logits from mean-pooled task tokens: field -> (..., |vocab|)."""
    pooled = {task: T.reduce_mean(task_tokens[task], axis=-2) for task in TASKS}
    return {name.removeprefix("head."): L.linear(store, name, pooled[task])
            for name, task, _vocab in _field_head_names(cfg)}


def field_targets(scene: SceneState, cfg: ModelConfig) -> dict[str, int | None]:
    """Canonical target index per head field; None masks a field from the loss
    (slot attributes of absent slots make no claim)."""
    answers = StructuredAnswerSet.from_scene(scene, cfg.n_obstacle_slots)
    targets: dict[str, int | None] = {
        fname: index_of(fname, getattr(answers, fname))
        for fields in SCALAR_FIELDS.values() for fname in fields
    }
    for k, slot in enumerate(answers.obstacle_slots):
        targets[f"obstacle{k}_present"] = index_of("obstacle_present",
                                                   "present" if slot.present else "absent")
        for attr in SLOT_ATTRS:
            targets[f"obstacle{k}_{attr}"] = (
                index_of(f"obstacle_{attr}", getattr(slot, attr)) if slot.present else None)
    return targets


def decode_structured(logits: dict[str, Tensor], cfg: ModelConfig) -> list[StructuredAnswerSet]:
    """Argmax decode (first-maximum = vocabulary-order tie-break) per record."""
    some = next(iter(logits.values()))
    if some.ndim == 1:
        picks = {f: np.array([np.argmax(t.data)]) for f, t in logits.items()}
        n = 1
    else:
        picks = {f: np.argmax(t.data, axis=-1) for f, t in logits.items()}
        n = some.shape[0]
    out = []
    for i in range(n):
        slots = []
        for k in range(cfg.n_obstacle_slots):
            present = FIELD_VOCABS["obstacle_present"][picks[f"obstacle{k}_present"][i]]
            slots.append(ObstacleSlot(
                present == "present",
                FIELD_VOCABS["obstacle_category"][picks[f"obstacle{k}_category"][i]],
                FIELD_VOCABS["obstacle_direction"][picks[f"obstacle{k}_direction"][i]],
                FIELD_VOCABS["obstacle_distance"][picks[f"obstacle{k}_distance"][i]]))
        out.append(StructuredAnswerSet(
            weather=FIELD_VOCABS["weather"][picks["weather"][i]],
            illumination=FIELD_VOCABS["illumination"][picks["illumination"][i]],
            availability=FIELD_VOCABS["availability"][picks["availability"][i]],
            free_space_direction=FIELD_VOCABS["free_space_direction"][
                picks["free_space_direction"][i]],
            terrain=FIELD_VOCABS["terrain"][picks["terrain"][i]],
            difficulty=FIELD_VOCABS["difficulty"][picks["difficulty"][i]],
            action=FIELD_VOCABS["action"][picks["action"][i]],
            obstacle_slots=slots))
    return out


# -- caption rendering ---------------------------------------------------------

WEATHER_FRAME = "weather is {weather} under {illumination}."
DRIVABLE_FRAME = "drivable area is {availability} toward {direction}."
TERRAIN_FRAME = "terrain is {terrain}, traversability {difficulty}."
OBSTACLE_FRAME = "obstacle: {category} at {direction} {distance}."
NO_OBSTACLE_SENTENCE = "no obstacles detected."
SUGGESTION_FRAME = "suggestion: {action}."


@dataclass
class CaptionText:
    sentences: list[str]

    @property
    def text(self) -> str:
        return " ".join(self.sentences)

    @property
    def tokens(self) -> list[str]:
        return self.text.lower().split()


def render_caption(answers: StructuredAnswerSet) -> CaptionText:
    """Deterministic sentence frames; identical answers -> identical captions."""
    sentences = [
        WEATHER_FRAME.format(weather=answers.weather, illumination=answers.illumination),
        DRIVABLE_FRAME.format(availability=answers.availability,
                              direction=answers.free_space_direction),
        TERRAIN_FRAME.format(terrain=answers.terrain, difficulty=answers.difficulty),
    ]
    present = [s for s in answers.obstacle_slots if s.present]
    if present:
        sentences.extend(OBSTACLE_FRAME.format(category=s.category, direction=s.direction,
                                               distance=s.distance) for s in present)
    else:
        sentences.append(NO_OBSTACLE_SENTENCE)
    sentences.append(SUGGESTION_FRAME.format(action=answers.action))
    return CaptionText(sentences=sentences)
