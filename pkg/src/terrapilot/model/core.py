"""The full pipeline model: bridge -> field heads + planning token -> GRU.

``TerraModel`` owns the parameter store, the forward pass for all three
bridge modes, the two training losses, and checkpoint save/load with
config-compatibility hashes.  Compute is float64 regardless of feature
storage dtype; fixed (config, seed) gives bit-identical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import PipelineConfig, build_config, config_hash, parse_config_text, resolve_config, sim_hash
from ..errors import ConfigError, DataError
from ..nn import layers as L
from ..nn import tensor as T
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.layers import ParamStore, onehot
from ..nn.tensor import Tensor
from ..vocab import FIELD_VOCABS
from .bridge import BridgeOutputs, bridge_forward, init_bridge_params
from .heads import (decode_structured, head_logits, init_head_params,
                    render_caption, vocab_name_of)
from .planner import gru_decode, init_planner_params, make_planning_token

# Reference points steer queries through discrete grid binning, which has
# zero gradient almost everywhere, so they stay out of the trainable set.
GRADIENT_DEAD_PARAMS = ("bank.ref",)


def phase1_trainable(name: str) -> bool:
    """Phase 1 trains everything except the router and dead parameters."""
    return not name.startswith("router.") and name not in GRADIENT_DEAD_PARAMS


def phase2_trainable(name: str) -> bool:
    """Phase 2 trains the router alone."""
    return name.startswith("router.")


@dataclass
class ModelOutputs:
    bridge: BridgeOutputs
    logits: dict[str, Tensor]     # field -> (B, |vocab|)
    latent: Tensor                # (B, 1, plan_latent)
    trajectories: Tensor          # (B, n_modes, 4, 2)


class TerraModel:
    def __init__(self, cfg: PipelineConfig, seed: int = 0,
                 store: ParamStore | None = None):
        if cfg.geometry.feat_dim != cfg.model.query_dim:
            raise ConfigError(
                f"geometry.feat_dim ({cfg.geometry.feat_dim}) must equal "
                f"model.query_dim ({cfg.model.query_dim}): fused feature "
                f"tokens feed the bridge attention unprojected")
        self.cfg = cfg
        self.seed = seed
        if store is None:
            store = ParamStore(dtype=cfg.model.dtype)
            rng = np.random.default_rng(seed)
            init_bridge_params(store, cfg.model, rng)
            init_head_params(store, cfg.model, rng)
            init_planner_params(store, cfg.model, rng)
        self.store = store

    # -- forward ---------------------------------------------------------------

    def forward(self, features: np.ndarray | Tensor, mode: str) -> ModelOutputs:
        if not isinstance(features, Tensor):
            features = Tensor(np.asarray(features, dtype=np.float64))
        bridge = bridge_forward(self.store, self.cfg.model, self.cfg.geometry,
                                features, mode)
        logits = head_logits(self.store, self.cfg.model, bridge.task_tokens)
        _x_p, z = make_planning_token(self.store, self.cfg.model, bridge.task_tokens)
        trajectories = gru_decode(self.store, self.cfg.model, z)
        return ModelOutputs(bridge=bridge, logits=logits, latent=z,
                            trajectories=trajectories)

    # -- losses ----------------------------------------------------------------

    def text_loss(self, logits: dict[str, Tensor],
                  targets: list[dict[str, int | None]]) -> Tensor:
        """Sum over fields of batch-mean cross-entropy.

        A None target (an absent obstacle slot's attribute) supervises
        toward the uniform distribution: the slot carries no claim, so
        the head is trained to maximum entropy there.  Every head
        therefore receives a gradient from every batch, and at uniform
        prediction each field's loss is exactly ln |vocab| either way.
        """
        terms = []
        for field, field_logits in logits.items():
            vocab_n = len(FIELD_VOCABS[vocab_name_of(field)])
            y = np.full((len(targets), vocab_n), 1.0 / vocab_n)
            for i, tg in enumerate(targets):
                label = tg[field]
                if label is not None:
                    y[i] = 0.0
                    y[i, label] = 1.0
            probs = T.softmax(field_logits, axis=-1)
            terms.append(L.cross_entropy_dist(probs, y))
        total = terms[0]
        for term in terms[1:]:
            total = T.add(total, term)
        return total

    def waypoint_loss(self, trajectories: Tensor, horizon: np.ndarray) -> Tensor:
        """Winner-take-all: batch mean of each record's best-mode MSE.

        ``horizon`` is (B, 4, 2) ground truth; the per-record winning mode
        is chosen by fixed argmin on the forward values and enters the
        graph as a one-hot constant.
        """
        horizon = np.asarray(horizon, dtype=np.float64)
        gt = horizon[:, None, :, :]  # broadcast over modes
        diff = T.add(trajectories, T.mul(Tensor(np.broadcast_to(
            gt, trajectories.shape).copy()), -1.0))
        per_mode = T.reduce_mean(T.mul(diff, diff), axis=(-2, -1))  # (B, M)
        winners = onehot(np.argmin(per_mode.data, axis=-1), per_mode.shape[-1])
        return T.reduce_mean(T.reduce_sum(T.mul(per_mode, winners), axis=-1))

    def phase1_loss(self, outputs: ModelOutputs,
                    targets: list[dict[str, int | None]],
                    horizon: np.ndarray) -> dict[str, Tensor]:
        l_text = self.text_loss(outputs.logits, targets)
        l_way = self.waypoint_loss(outputs.trajectories, horizon)
        return {"l_text": l_text, "l_waypoint": l_way,
                "l_total": T.add(l_text, l_way)}

    def route_loss(self, probs: Tensor, labels: np.ndarray) -> tuple[Tensor, float]:
        """Mean per-query cross-entropy against per-record branch labels.

        ``labels`` is (B,) with the record's availability class broadcast
        to all of its queries; the sum-over-queries objective differs only
        by the constant query count.  Also returns argmax accuracy.
        """
        labels = np.asarray(labels)
        y = np.broadcast_to(onehot(labels, probs.shape[-1])[:, None, :],
                            probs.shape).copy()
        loss = L.cross_entropy(probs, y)
        pred = np.argmax(probs.data, axis=-1)
        accuracy = float(np.mean(pred == labels[:, None]))
        return loss, accuracy

    # -- inference ---------------------------------------------------------------

    def predict(self, features: np.ndarray, mode: str = "routed") -> list[dict]:
        """Per-record structured answers, caption tokens, and waypoints."""
        outputs = self.forward(features, mode)
        answers = decode_structured(outputs.logits, self.cfg.model)
        traj = outputs.trajectories.data
        preds = []
        for i, ans in enumerate(answers):
            preds.append({
                "answers": ans,
                "caption": render_caption(ans),
                "waypoints": np.array(traj[i], dtype=np.float64),
                "assignment": (None if outputs.bridge.assignments is None
                               else np.array(outputs.bridge.assignments[i])),
            })
        return preds

    # -- persistence -------------------------------------------------------------

    def save(self, path: str | Path, phase: int, extra_meta: dict | None = None) -> None:
        meta = {
            "config": resolve_config(self.cfg),
            "config_hash": config_hash(self.cfg),
            "sim_hash": sim_hash(self.cfg),
            "phase": phase,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(self.store, path, seed=self.seed, meta=meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["TerraModel", dict]:
        store, seed, meta = load_checkpoint(path)
        if "config" not in meta:
            raise DataError(f"checkpoint {path} carries no config snapshot")
        cfg = build_config(parse_config_text(meta["config"]))
        model = cls(cfg, seed=seed, store=store)
        return model, meta
