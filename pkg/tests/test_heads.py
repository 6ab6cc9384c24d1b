"""Structured-answer heads: target construction, argmax decode, and the
caption renderer (whose output doubles as the BLEU reference text)."""

from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from terrapilot.config import ModelConfig
from terrapilot.model.heads import (NO_OBSTACLE_SENTENCE, ObstacleSlot,
                                    StructuredAnswerSet, decode_structured,
                                    field_targets, render_caption,
                                    vocab_name_of)
from terrapilot.nn.tensor import Tensor
from terrapilot.sim.scene import Obstacle, SceneState
from terrapilot.vocab import FIELD_VOCABS, SCALAR_FIELDS, index_of


def make_scene(obstacles) -> SceneState:
    return SceneState(weather="rainy", illumination="twilight", terrain="mud",
                      difficulty="hard", availability="partially_blocked",
                      free_space_direction="front_left", obstacles=obstacles,
                      action="turn_left",
                      future_trajectory=np.zeros((20, 2)), speed=3.0)


def test_field_targets_for_scalar_fields():
    scene = make_scene([])
    targets = field_targets(scene, ModelConfig())
    assert targets["weather"] == index_of("weather", "rainy")
    assert targets["illumination"] == index_of("illumination", "twilight")
    assert targets["terrain"] == index_of("terrain", "mud")
    assert targets["difficulty"] == index_of("difficulty", "hard")
    assert targets["availability"] == index_of("availability", "partially_blocked")
    assert targets["free_space_direction"] == index_of("free_space_direction",
                                                       "front_left")
    assert targets["action"] == index_of("action", "turn_left")


def test_field_targets_absent_slots_are_none_and_present_is_supervised():
    scene = make_scene([Obstacle("rock", "front", "near", (5.0, 0.0))])
    targets = field_targets(scene, ModelConfig())
    assert targets["obstacle0_present"] == index_of("obstacle_present", "present")
    assert targets["obstacle0_category"] == index_of("obstacle_category", "rock")
    assert targets["obstacle0_direction"] == index_of("obstacle_direction", "front")
    assert targets["obstacle0_distance"] == index_of("obstacle_distance", "near")
    for k in (1, 2):
        assert targets[f"obstacle{k}_present"] == index_of("obstacle_present",
                                                           "absent")
        for attr in ("category", "direction", "distance"):
            assert targets[f"obstacle{k}_{attr}"] is None


def test_slots_are_ordered_by_direction_vocabulary():
    scene = make_scene([
        Obstacle("tree", "right", "far", (8.0, -8.0)),
        Obstacle("animal", "front", "mid", (12.0, 0.0)),
    ])
    answers = StructuredAnswerSet.from_scene(scene, 3)
    assert [s.category for s in answers.obstacle_slots if s.present] == \
        ["animal", "tree"]  # 'front' precedes 'right' in the vocabulary


def test_field_targets_cover_every_head(tiny_model, cfg):
    scene = make_scene([])
    targets = field_targets(scene, cfg.model)
    feats = np.zeros((1, cfg.geometry.n_tokens, cfg.geometry.feat_dim))
    logits = tiny_model.forward(feats, mode="stacked").logits
    assert set(targets) == set(logits)
    for field in logits:
        vocab = FIELD_VOCABS[vocab_name_of(field)]
        assert logits[field].data.shape == (1, len(vocab))


def logits_for(answers: StructuredAnswerSet, cfg: ModelConfig) -> dict:
    """One-hot logits that must decode back to ``answers`` exactly."""
    out = {}
    for fields in SCALAR_FIELDS.values():
        for fname in fields:
            vocab = FIELD_VOCABS[fname]
            row = np.zeros((1, len(vocab)))
            row[0, index_of(fname, getattr(answers, fname))] = 5.0
            out[fname] = Tensor(row)
    for k, slot in enumerate(answers.obstacle_slots):
        row = np.zeros((1, 2))
        row[0, index_of("obstacle_present",
                        "present" if slot.present else "absent")] = 5.0
        out[f"obstacle{k}_present"] = Tensor(row)
        for attr in ("category", "direction", "distance"):
            vocab = FIELD_VOCABS[f"obstacle_{attr}"]
            row = np.zeros((1, len(vocab)))
            row[0, index_of(f"obstacle_{attr}", getattr(slot, attr))] = 5.0
            out[f"obstacle{k}_{attr}"] = Tensor(row)
    return out


def random_answers(rng, n_slots=3) -> StructuredAnswerSet:
    def pick(name):
        vocab = FIELD_VOCABS[name]
        return vocab[rng.integers(len(vocab))]

    slots = []
    for _ in range(n_slots):
        present = bool(rng.integers(2))
        slots.append(ObstacleSlot(present, pick("obstacle_category"),
                                  pick("obstacle_direction"),
                                  pick("obstacle_distance")))
    return StructuredAnswerSet(
        weather=pick("weather"), illumination=pick("illumination"),
        availability=pick("availability"),
        free_space_direction=pick("free_space_direction"),
        terrain=pick("terrain"), difficulty=pick("difficulty"),
        action=pick("action"), obstacle_slots=slots)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_decode_inverts_onehot_logits(seed):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig()
    answers = random_answers(rng)
    decoded = decode_structured(logits_for(answers, cfg), cfg)[0]
    # Absent slots decode with canonical attribute values, so compare
    # presence first and attributes only on present slots.
    assert decoded.weather == answers.weather
    assert decoded.action == answers.action
    assert decoded.terrain == answers.terrain
    for got, want in zip(decoded.obstacle_slots, answers.obstacle_slots):
        assert got.present == want.present
        if want.present:
            assert (got.category, got.direction, got.distance) == \
                (want.category, want.direction, want.distance)


def test_round_trip_dict_serialization():
    rng = np.random.default_rng(17)
    answers = random_answers(rng)
    again = StructuredAnswerSet.from_dict(answers.to_dict())
    assert again == answers


def test_caption_templates_and_no_obstacle_sentence():
    scene = make_scene([])
    answers = StructuredAnswerSet.from_scene(scene, 3)
    caption = render_caption(answers)
    assert caption.sentences[0] == "weather is rainy under twilight."
    assert caption.sentences[1] == \
        "drivable area is partially_blocked toward front_left."
    assert caption.sentences[2] == "terrain is mud, traversability hard."
    assert NO_OBSTACLE_SENTENCE in caption.sentences
    assert caption.sentences[-1] == "suggestion: turn_left."
    assert caption.tokens == caption.text.lower().split()


def test_caption_lists_present_obstacles_in_slot_order():
    scene = make_scene([
        Obstacle("pole", "left", "mid", (3.0, 6.0)),
        Obstacle("vehicle", "front", "near", (4.0, 0.0)),
    ])
    answers = StructuredAnswerSet.from_scene(scene, 3)
    caption = render_caption(answers)
    assert "obstacle: vehicle at front near." in caption.sentences
    assert "obstacle: pole at left mid." in caption.sentences
    assert caption.sentences.index("obstacle: vehicle at front near.") < \
        caption.sentences.index("obstacle: pole at left mid.")
    assert NO_OBSTACLE_SENTENCE not in caption.sentences


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_caption_rendering_is_injective_up_to_absent_slot_attrs(seed):
    # Captions drive BLEU-against-self-render: distinct answers must give
    # distinct captions (absent slot attributes excepted: they are not
    # rendered, by design).
    rng = np.random.default_rng(seed)
    a, b = random_answers(rng), random_answers(rng)

    def visible(ans):
        return (ans.weather, ans.illumination, ans.availability,
                ans.free_space_direction, ans.terrain, ans.difficulty,
                ans.action,
                tuple((s.category, s.direction, s.distance)
                      for s in ans.obstacle_slots if s.present))

    if visible(a) == visible(b):
        assert render_caption(a).text == render_caption(b).text
    else:
        assert render_caption(a).text != render_caption(b).text
