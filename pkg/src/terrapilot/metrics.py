"""Evaluation metrics and report emission.

Corpus BLEU over rendered caption tokens, exact-match structured-field
accuracy with direction-aligned obstacle scoring, displacement errors
over multi-mode trajectories, and a versioned, timestamp-free
:class:`MetricReport` whose serialization is byte-stable for identical
(model, dataset) inputs.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvariantViolation
from .model.core import TerraModel
from .model.heads import StructuredAnswerSet, decode_structured, render_caption
from .sim.dataset import DatasetRecord
from .sim.scene import SceneState, horizon_points

REPORT_SCHEMA_VERSION = 1

SCALAR_ANSWER_FIELDS = ("weather", "illumination", "availability",
                        "free_space_direction", "terrain", "difficulty",
                        "action")


# -- BLEU ------------------------------------------------------------------


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidates: list[list[str]], references: list[list[str]], n: int,
           sentence_level: bool = False) -> float:
    """Corpus BLEU-n: clipped precision, geometric mean over orders 1..n,
    brevity penalty exp(1 - r/c) when c < r, no smoothing (a zero count at
    any order gives 0).  ``sentence_level=True`` averages per-pair scores
    instead (diagnostics only).
    """
    if n not in (1, 2, 4):
        raise ValueError(f"n must be 1, 2, or 4, got {n}")
    if not candidates or not references:
        raise DataError("BLEU needs a non-empty corpus")
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} candidates vs "
                        f"{len(references)} references")
    if sentence_level:
        return float(np.mean([bleu_n([c], [r], n) for c, r in
                              zip(candidates, references)]))

    matched = [0] * n
    total = [0] * n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for k in range(1, n + 1):
            cand_counts = _ngrams(cand, k)
            ref_counts = _ngrams(ref, k)
            matched[k - 1] += sum(min(c, ref_counts[g])
                                  for g, c in cand_counts.items())
            total[k - 1] += max(len(cand) - k + 1, 0)
    if cand_len == 0 or any(t == 0 for t in total) or any(m == 0 for m in matched):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, total)) / n
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_precision)


# -- structured-field accuracy ----------------------------------------------


def field_accuracy(preds: list[StructuredAnswerSet], scenes: list[SceneState],
                   n_slots: int = 3) -> tuple[dict[str, float], float]:
    """Exact-match accuracy per field plus the unweighted macro mean.

    Scalar fields compare directly.  Obstacles are scored in three parts:
    ``obstacle_presence`` is an exact match of the predicted direction
    multiset against the ground truth; ``obstacle_category`` and
    ``obstacle_distance`` are match rates over direction-aligned slot
    pairs (the first predicted slot per direction).  Fields with no
    samples (e.g. no obstacle in the corpus) are left out of the macro.
    """
    if len(preds) != len(scenes):
        raise DataError(f"{len(preds)} predictions vs {len(scenes)} scenes")
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}

    def score(fname: str, ok: bool) -> None:
        hits[fname] = hits.get(fname, 0) + bool(ok)
        totals[fname] = totals.get(fname, 0) + 1

    for pred, scene in zip(preds, scenes):
        gt = StructuredAnswerSet.from_scene(scene, n_slots)
        for fname in SCALAR_ANSWER_FIELDS:
            score(fname, getattr(pred, fname) == getattr(gt, fname))
        pred_present = [s for s in pred.obstacle_slots if s.present]
        gt_present = [s for s in gt.obstacle_slots if s.present]
        score("obstacle_presence",
              sorted(s.direction for s in pred_present)
              == sorted(s.direction for s in gt_present))
        pred_by_dir: dict[str, object] = {}
        for slot in pred_present:
            pred_by_dir.setdefault(slot.direction, slot)
        for gt_slot in gt_present:
            match = pred_by_dir.get(gt_slot.direction)
            if match is None:
                continue
            score("obstacle_category", match.category == gt_slot.category)
            score("obstacle_distance", match.distance == gt_slot.distance)

    per_field = {fname: hits[fname] / totals[fname] for fname in totals}
    macro = float(np.mean(list(per_field.values())))
    return per_field, macro


# -- displacement errors -----------------------------------------------------


def fde(pred_final, gt_final, squared: bool = False) -> float:
    """Displacement between final waypoints; ``squared=True`` returns the
    squared Euclidean norm, ``squared=False`` the conventional distance."""
    pred_final = np.asarray(pred_final, dtype=np.float64)
    gt_final = np.asarray(gt_final, dtype=np.float64)
    if not (np.all(np.isfinite(pred_final)) and np.all(np.isfinite(gt_final))):
        raise DataError("fde requires finite endpoints")
    d2 = float(np.sum((pred_final - gt_final) ** 2))
    return d2 if squared else math.sqrt(d2)


def mode_ades(modes: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-mode average Euclidean displacement over the horizon points."""
    modes = np.asarray(modes, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if modes.ndim != 3 or modes.shape[0] < 1 or modes.shape[1:] != gt.shape:
        raise DataError(f"mode shape {modes.shape} does not fit ground truth "
                        f"{gt.shape}")
    return np.linalg.norm(modes - gt[None], axis=-1).mean(axis=-1)


def min_ade(modes: np.ndarray, gt: np.ndarray) -> tuple[float, int]:
    """(lowest per-mode ADE, argmin mode index)."""
    ades = mode_ades(modes, gt)
    idx = int(np.argmin(ades))
    return float(ades[idx]), idx


# -- report ------------------------------------------------------------------


@dataclass
class MetricReport:
    """Versioned, timestamp-free evaluation summary (byte-stable JSON)."""

    config_hash: str
    n_records: int
    bleu_1: float
    bleu_2: float
    bleu_4: float
    field_accuracy: dict[str, float]
    macro_field_accuracy: float
    fde: float
    fde_squared: float
    min_ade: float
    routing_accuracy: float | None = None
    breakdown: dict[str, "MetricReport"] = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def __post_init__(self):
        values = [self.bleu_1, self.bleu_2, self.bleu_4,
                  self.macro_field_accuracy, self.fde, self.fde_squared,
                  self.min_ade, *self.field_accuracy.values()]
        if self.routing_accuracy is not None:
            values.append(self.routing_accuracy)
        if not all(np.isfinite(v) for v in values):
            raise InvariantViolation("metric report contains non-finite values")
        if self.breakdown:
            cell_total = sum(r.n_records for r in self.breakdown.values())
            if cell_total != self.n_records:
                raise InvariantViolation(
                    f"breakdown records {cell_total} != total {self.n_records}")

    def to_dict(self) -> dict:
        out = {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "n_records": self.n_records,
            "bleu_1": self.bleu_1,
            "bleu_2": self.bleu_2,
            "bleu_4": self.bleu_4,
            "field_accuracy": dict(sorted(self.field_accuracy.items())),
            "macro_field_accuracy": self.macro_field_accuracy,
            "fde": self.fde,
            "fde_squared": self.fde_squared,
            "min_ade": self.min_ade,
            "routing_accuracy": self.routing_accuracy,
        }
        if self.breakdown:
            out["breakdown"] = {cell: rep.to_dict()
                                for cell, rep in sorted(self.breakdown.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        try:
            if d["schema_version"] != REPORT_SCHEMA_VERSION:
                raise DataError(f"unsupported report schema "
                                f"{d['schema_version']}")
            breakdown = {cell: cls.from_dict(sub)
                         for cell, sub in d.get("breakdown", {}).items()}
            return cls(config_hash=d["config_hash"], n_records=d["n_records"],
                       bleu_1=d["bleu_1"], bleu_2=d["bleu_2"], bleu_4=d["bleu_4"],
                       field_accuracy=dict(d["field_accuracy"]),
                       macro_field_accuracy=d["macro_field_accuracy"],
                       fde=d["fde"], fde_squared=d["fde_squared"],
                       min_ade=d["min_ade"],
                       routing_accuracy=d["routing_accuracy"],
                       breakdown=breakdown,
                       schema_version=d["schema_version"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed metric report: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"unparseable metric report: {exc}") from exc
        return cls.from_dict(d)


def evaluate(model: TerraModel, records: list[DatasetRecord],
             mode: str = "routed", batch_size: int = 16,
             config_hash_value: str | None = None) -> MetricReport:
    """Full evaluation of a model on a record list.

    Captions are scored against references rendered from the ground-truth
    fields through the same templates.  FDE is computed on the
    minimum-ADE mode of each record; the per-record ``min_ade <= ADE of
    every mode`` invariant is asserted outright.  Routing accuracy is
    reported in routed mode, against each record's availability label.
    """
    if not records:
        raise DataError("cannot evaluate an empty record list")
    from .config import config_hash as cfg_hash  # local to avoid cycle noise
    n_slots = model.cfg.model.n_obstacle_slots

    answers: list[StructuredAnswerSet] = []
    cands: list[list[str]] = []
    refs: list[list[str]] = []
    ade_mins: list[float] = []
    fdes: list[float] = []
    fdes_sq: list[float] = []
    route_hits = 0
    route_total = 0
    for start in range(0, len(records), batch_size):
        batch = records[start:start + batch_size]
        feats = np.stack([rec.features.fused_tokens for rec in batch])
        outputs = model.forward(feats, mode)
        decoded = decode_structured(outputs.logits, model.cfg.model)
        traj = outputs.trajectories.data
        for i, rec in enumerate(batch):
            answers.append(decoded[i])
            cands.append(render_caption(decoded[i]).tokens)
            gt_answers = StructuredAnswerSet.from_scene(rec.scene, n_slots)
            refs.append(render_caption(gt_answers).tokens)
            gt_horizon = horizon_points(rec.scene.future_trajectory)
            ades = mode_ades(traj[i], gt_horizon)
            best, best_idx = min_ade(traj[i], gt_horizon)
            if not np.all(best <= ades + 1e-15):
                raise InvariantViolation(
                    f"min_ade {best} exceeds a per-mode ADE on record {rec.id}")
            ade_mins.append(best)
            fdes.append(fde(traj[i, best_idx, -1], gt_horizon[-1]))
            fdes_sq.append(fde(traj[i, best_idx, -1], gt_horizon[-1],
                               squared=True))
        if mode == "routed":
            labels = np.array([int(np.argmax(rec.routing_label))
                               for rec in batch])
            pred = np.argmax(outputs.bridge.probs.data, axis=-1)
            route_hits += int(np.sum(pred == labels[:, None]))
            route_total += pred.size

    per_field, macro = field_accuracy(answers,
                                      [rec.scene for rec in records], n_slots)
    return MetricReport(
        config_hash=config_hash_value or cfg_hash(model.cfg),
        n_records=len(records),
        bleu_1=bleu_n(cands, refs, 1),
        bleu_2=bleu_n(cands, refs, 2),
        bleu_4=bleu_n(cands, refs, 4),
        field_accuracy=per_field,
        macro_field_accuracy=macro,
        fde=float(np.mean(fdes)),
        fde_squared=float(np.mean(fdes_sq)),
        min_ade=float(np.mean(ade_mins)),
        routing_accuracy=(route_hits / route_total if route_total else None),
    )
