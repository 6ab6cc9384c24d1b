"""Two-phase optimization: experts/heads/planner first, router second.

Phase 1 trains every non-router parameter on clean records with
``L_total = L_text + L_waypoint`` in the routing-bypassed (stacked)
forward mode.  Phase 2 freezes everything but the router and trains it
under balanced per-record modality dropout with a per-query
cross-entropy against the record's availability class; the router-only
loss graph never touches the expert decoders, and a before/after
checksum proves the frozen set is bitwise unchanged.

Both phases shuffle and draw dropout from dedicated seeded streams and
start a fresh optimizer, so a fixed (config, seed) pair reproduces the
final checkpoint byte for byte.  Per-epoch wall times are the one
non-deterministic log field; :meth:`TrainLog.canonical` strips them for
reproducibility comparisons.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .config import config_hash
from .errors import ConfigError, DataError, InvariantViolation
from .model.bridge import build_query_masks, embed_queries, route
from .model.core import TerraModel, phase2_trainable, phase1_trainable
from .model.heads import field_targets
from .nn.optim import adam_step
from .nn.tensor import Tensor
from .sim.dataset import DatasetRecord
from .sim.degrade import DegradationSpec, apply_degradation
from .sim.scene import horizon_points

# Phase-2 dropout settings.  The tuple index IS the routing class the router
# must predict for records degraded that way: 0 -> camera dropped (only the
# LiDAR branch is reliable), 1 -> LiDAR dropped, 2 -> both sensors intact.
DROPOUT_SETTINGS = (
    DegradationSpec(camera="blackout"),
    DegradationSpec(lidar="blackout"),
    DegradationSpec(),
)


@dataclass
class TrainLog:
    """Line-delimited training record: one header line, one line per epoch."""

    phase: int
    seed: int
    config_hash: str
    n_records: int
    epochs: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        header = {"config_hash": self.config_hash, "n_records": self.n_records,
                  "phase": self.phase, "seed": self.seed}
        lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
        lines += [json.dumps(e, sort_keys=True, separators=(",", ":"))
                  for e in self.epochs]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DataError("empty training log")
        try:
            header = json.loads(lines[0])
            epochs = [json.loads(ln) for ln in lines[1:]]
            return cls(phase=header["phase"], seed=header["seed"],
                       config_hash=header["config_hash"],
                       n_records=header["n_records"], epochs=epochs)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"malformed training log: {exc}") from exc

    def canonical(self) -> str:
        """Log text with wall-clock fields removed; compare these for
        determinism (wall time is real elapsed time, nothing else varies)."""
        out = TrainLog(self.phase, self.seed, self.config_hash, self.n_records,
                       [{k: v for k, v in e.items() if k != "wall_time_s"}
                        for e in self.epochs])
        return out.to_jsonl()


def draw_dropout_settings(rng: np.random.Generator, n: int,
                          probs=(1 / 3, 1 / 3, 1 / 3)) -> np.ndarray:
    """Per-record dropout classes (indices into DROPOUT_SETTINGS)."""
    return rng.choice(len(DROPOUT_SETTINGS), size=n, p=np.asarray(probs))


def _require_clean(batch: list[DatasetRecord], phase: int) -> None:
    for rec in batch:
        if not rec.degradation.is_clean:
            raise ConfigError(
                f"phase {phase} trains on clean records only; record {rec.id} "
                f"is degraded ({rec.degradation.label()})")


def _check_finite(entry: dict) -> None:
    bad = {k: v for k, v in entry.items()
           if isinstance(v, float) and not np.isfinite(v)}
    if bad:
        raise InvariantViolation(f"non-finite training losses: {bad}")


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def _fresh_optimizer(model: TerraModel) -> None:
    model.store.opt_state.clear()
    model.store.opt_step = 0


# -- phase 1 -------------------------------------------------------------------


def phase1_step(model: TerraModel, batch: list[DatasetRecord], lr: float,
                betas: tuple[float, float], eps: float) -> dict[str, float]:
    """One stacked-mode update on a clean batch; returns the loss scalars."""
    _require_clean(batch, phase=1)
    features = np.stack([rec.features.fused_tokens for rec in batch])
    targets = [field_targets(rec.scene, model.cfg.model) for rec in batch]
    horizon = np.stack([horizon_points(rec.scene.future_trajectory)
                        for rec in batch])
    outputs = model.forward(features, mode="stacked")
    losses = model.phase1_loss(outputs, targets, horizon)
    model.store.zero_grad()
    losses["l_total"].backward()
    adam_step(model.store, lr, betas, eps)
    return {k: float(v.data) for k, v in losses.items()}


def train_phase1(model: TerraModel, records: list[DatasetRecord]) -> TrainLog:
    """Train experts, heads, and planner; router and dead parameters frozen."""
    if not records:
        raise DataError("cannot train on an empty dataset")
    tc = model.cfg.train
    model.store.set_trainable(phase1_trainable)
    _fresh_optimizer(model)
    order_rng = np.random.default_rng((tc.seed, 11))
    log = TrainLog(phase=1, seed=tc.seed, config_hash=config_hash(model.cfg),
                   n_records=len(records))
    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        order = order_rng.permutation(len(records))
        sums = {"l_text": 0.0, "l_waypoint": 0.0, "l_total": 0.0}
        seen = 0
        for batch_idx in _batches(order, tc.batch_size):
            batch = [records[i] for i in batch_idx]
            vals = phase1_step(model, batch, tc.lr,
                               (tc.adam_beta1, tc.adam_beta2), tc.adam_eps)
            for key in sums:
                sums[key] += vals[key] * len(batch)
            seen += len(batch)
        entry = {"epoch": epoch,
                 **{k: s / seen for k, s in sums.items()},
                 "wall_time_s": round(time.perf_counter() - t0, 3)}
        _check_finite(entry)
        log.epochs.append(entry)
    return log


# -- phase 2 -------------------------------------------------------------------


def route_probs(model: TerraModel, features: np.ndarray) -> Tensor:
    """Router branch probabilities (B, n_queries, 3) without expert decode.

    The routing loss depends only on this subgraph, so phase 2 skips the
    expert/compression stages entirely.
    """
    feats = Tensor(np.asarray(features, dtype=np.float64))
    q_all = embed_queries(model.store, model.cfg.model)
    masks = build_query_masks(model.store, model.cfg.model, model.cfg.geometry)
    probs, _assignments = route(model.store, q_all, feats, masks)
    return probs


def degraded_batch(batch: list[DatasetRecord], settings: np.ndarray,
                   seed_parts: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Apply per-record dropout settings; returns (features, class labels).

    Labels come from the post-dropout availability flags, which coincide
    with the setting index by construction of DROPOUT_SETTINGS.
    """
    feats, labels = [], []
    for j, (rec, s) in enumerate(zip(batch, settings)):
        degraded = apply_degradation(rec.features, DROPOUT_SETTINGS[int(s)],
                                     seed_parts + (j,))
        feats.append(degraded.fused_tokens)
        labels.append(int(np.argmax(degraded.routing_label())))
    return np.stack(feats), np.array(labels)


def phase2_step(model: TerraModel, batch: list[DatasetRecord],
                settings: np.ndarray, degrade_seed: tuple[int, ...], lr: float,
                betas: tuple[float, float], eps: float) -> tuple[float, float]:
    """One router update under the given dropout settings.

    Returns (L_route, routing accuracy) for the batch.  Raises
    InvariantViolation if any unfrozen non-router parameter would be
    updated — the freeze predicate is part of the phase-2 contract.
    """
    _require_clean(batch, phase=2)
    features, labels = degraded_batch(batch, settings, degrade_seed)
    probs = route_probs(model, features)
    loss, accuracy = model.route_loss(probs, labels)
    model.store.zero_grad()
    loss.backward()
    offenders = [name for name in model.store.trainable_names()
                 if not phase2_trainable(name)
                 and model.store[name].grad is not None
                 and np.any(model.store[name].grad)]
    if offenders:
        raise InvariantViolation(
            f"phase 2 would update non-router parameters: {offenders[:3]}")
    adam_step(model.store, lr, betas, eps)
    return float(loss.data), accuracy


def _non_router_checksum(store) -> str:
    h = hashlib.sha256()
    for name in sorted(store.names()):
        if not phase2_trainable(name):
            h.update(store.checksum(name).encode())
    return h.hexdigest()


def train_phase2(model: TerraModel, records: list[DatasetRecord]) -> TrainLog:
    """Train the router alone under balanced 1/3 modality dropout."""
    if not records:
        raise DataError("cannot train on an empty dataset")
    tc = model.cfg.train
    if any(abs(p - 1 / 3) > 1e-9 for p in tc.drop_probs):
        raise ConfigError(
            f"phase 2 requires the balanced 1/3 dropout schedule, got "
            f"{tc.drop_probs}")
    model.store.set_trainable(phase2_trainable)
    _fresh_optimizer(model)
    frozen_before = _non_router_checksum(model.store)
    order_rng = np.random.default_rng((tc.seed, 21))
    drop_rng = np.random.default_rng((tc.seed, 22))
    log = TrainLog(phase=2, seed=tc.seed, config_hash=config_hash(model.cfg),
                   n_records=len(records))
    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        order = order_rng.permutation(len(records))
        settings_all = draw_dropout_settings(drop_rng, len(order), tc.drop_probs)
        loss_sum = acc_sum = 0.0
        cursor = 0
        for batch_idx in _batches(order, tc.batch_size):
            batch = [records[i] for i in batch_idx]
            settings = settings_all[cursor:cursor + len(batch)]
            loss, acc = phase2_step(model, batch, settings,
                                    (tc.seed, 23, epoch, cursor), tc.lr,
                                    (tc.adam_beta1, tc.adam_beta2), tc.adam_eps)
            loss_sum += loss * len(batch)
            acc_sum += acc * len(batch)
            cursor += len(batch)
        entry = {"epoch": epoch, "l_route": loss_sum / cursor,
                 "accuracy": acc_sum / cursor,
                 "wall_time_s": round(time.perf_counter() - t0, 3)}
        _check_finite(entry)
        log.epochs.append(entry)
    if _non_router_checksum(model.store) != frozen_before:
        raise InvariantViolation("phase 2 modified non-router parameters")
    return log


def routing_accuracy(model: TerraModel, records: list[DatasetRecord],
                     settings: np.ndarray, seed: int = 0,
                     chunk: int = 16) -> float:
    """Held-out routing accuracy under the given per-record dropout settings."""
    if len(records) != len(settings):
        raise DataError(f"{len(records)} records vs {len(settings)} settings")
    correct = 0
    total = 0
    for start in range(0, len(records), chunk):
        batch = records[start:start + chunk]
        features, labels = degraded_batch(batch, settings[start:start + len(batch)],
                                          (seed, 31, start))
        probs = route_probs(model, features)
        pred = np.argmax(probs.data, axis=-1)
        correct += int(np.sum(pred == labels[:, None]))
        total += pred.size
    return correct / total
