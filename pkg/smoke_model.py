"""Smoke test: bridge + heads + planner + full model forward/losses."""
import time

import numpy as np

from terrapilot.config import PipelineConfig
from terrapilot.model import (TerraModel, field_targets, render_caption,
                              StructuredAnswerSet, decode_structured,
                              build_query_masks, phase1_trainable, phase2_trainable)
from terrapilot.sim.scene import sample_scene, horizon_points
from terrapilot.sim.render import render_features, get_embedder
from terrapilot.sim.degrade import DegradationSpec, apply_degradation
from terrapilot.vocab import TASKS, LOCALIZED_TASKS
from terrapilot.nn import finite_diff_check
from terrapilot.nn import tensor as T

cfg = PipelineConfig()
t0 = time.time()
model = TerraModel(cfg, seed=7)
print(f"init: {model.store.n_values()} parameter values in {time.time()-t0:.2f}s")

# Batch of 4 scenes.
scenes = [sample_scene((100, i, 0), cfg.sim) for i in range(4)]
feats = [render_features(s, cfg.sim, (100, i, 1)) for i, s in enumerate(scenes)]
fused = np.stack([f.fused_tokens for f in feats])
print("fused:", fused.shape, fused.dtype)

# Mask sanity.
masks = build_query_masks(model.store, cfg.model, cfg.geometry)
k = cfg.model.queries_per_task
assert masks.shape == (320, cfg.geometry.n_tokens)
for t, task in enumerate(TASKS):
    rows = masks[t * k:(t + 1) * k]
    if task in LOCALIZED_TASKS:
        assert rows.sum(axis=1).min() >= 1, "localized mask empty"
        assert rows[:, :cfg.geometry.n_bev_tokens].sum(axis=1).min() >= 1, "BEV side empty"
    else:
        assert np.all(rows == 1.0), f"{task} should be all-ones"
print("masks ok; localized mean active tokens:",
      masks[2*k:, :].sum(axis=1).mean())

# Forward in all three modes.
for mode in ("stacked", "routed", "fusion_only"):
    t0 = time.time()
    out = model.forward(fused, mode)
    dt = time.time() - t0
    for task in TASKS:
        assert out.bridge.task_tokens[task].shape == (4, 3 * cfg.model.pool_tokens, 64)
    assert out.trajectories.shape == (4, 3, 4, 2)
    assert all(v.shape[0] == 4 for v in out.logits.values())
    if mode == "routed":
        assert out.bridge.probs.shape == (4, 320, 3)
        assert out.bridge.assignments.shape == (4, 320)
    if mode == "fusion_only":
        assert np.all(out.bridge.assignments == 2)
    print(f"forward[{mode}]: {dt*1000:.0f} ms, 19 field heads: {len(out.logits)}")

# fusion_only: l and c pooled token rows must be exactly zero after pooling
# but fuse-MLP maps them to constants; verify isolation at the pooling level
# by checking assignments-driven keep masks: probs None, all assigned lc.
out_f = model.forward(fused, "fusion_only")

# Targets, captions, losses.
targets = [field_targets(s, cfg.model) for s in scenes]
answers = [StructuredAnswerSet.from_scene(s, 3) for s in scenes]
caps = [render_caption(a) for a in answers]
print("caption example:", caps[0].text)
horizon = np.stack([horizon_points(s.future_trajectory) for s in scenes])
out = model.forward(fused, "stacked")
losses = model.phase1_loss(out, targets, horizon)
print({k: float(v.data) for k, v in losses.items()})
n_fields_present = sum(1 for f in out.logits if not np.all(
    [tg[f] is None for tg in targets]))
# untrained L_text should be around sum over fields of ln|V| (roughly)
print("approx sum ln|V| =", sum(np.log(len(__import__('terrapilot.vocab', fromlist=['FIELD_VOCABS']).FIELD_VOCABS[
    __import__('terrapilot.model.heads', fromlist=['vocab_name_of']).vocab_name_of(f)])) for f in out.logits))

# Backward through total loss; check gradient reach.
model.store.zero_grad()
losses["l_total"].backward()
got, missing = [], []
for name, p in model.store.items():
    (got if p.grad is not None and np.any(p.grad != 0) else missing).append(name)
print(f"params with nonzero grad: {len(got)}; zero/none: {len(missing)}")
print("no-grad (expected router.* + bank.ref + maybe c-branch pieces):",
      [m for m in missing][:12])

# Phase-2 style: routed forward on degraded features, route loss.
spec_cam = DegradationSpec(camera="blackout")
fused_cam = np.stack([apply_degradation(f, spec_cam, (100, i, 2)).fused_tokens for i, f in enumerate(feats)])
out_r = model.forward(fused_cam, "routed")
l_route, acc = model.route_loss(out_r.bridge.probs, np.zeros(4, dtype=int))
print(f"route loss {float(l_route.data):.4f} (ln3={np.log(3):.4f}), acc {acc:.3f}")

# Decode + template purity.
decoded = decode_structured(out.logits, cfg.model)
assert len(decoded) == 4
preds = model.predict(fused, mode="routed")
assert preds[0]["waypoints"].shape == (3, 4, 2)
print("pred caption:", preds[0]["caption"].text[:80])

# Checkpoint round trip.
model.save("/tmp/smoke_ckpt.bin", phase=1)
m2, meta = TerraModel.load("/tmp/smoke_ckpt.bin")
assert m2.store.checksum() == model.store.checksum()
assert meta["phase"] == 1
out2 = m2.forward(fused, "stacked")
assert np.array_equal(out2.trajectories.data, out.trajectories.data)
print("checkpoint round-trip exact")

# Small finite-diff probe through the whole model (subset of params).
small_scenes = scenes[:1]
small = fused[:1]
def loss_fn():
    o = model.forward(small, "stacked")
    l = model.phase1_loss(o, targets[:1], horizon[:1])
    return l["l_total"]
rep = finite_diff_check(loss_fn, model.store, rng=np.random.default_rng(0),
                        coords_per_tensor=3,
                        param_names=[n for n in model.store.names()
                                     if phase1_trainable(n)][:40])
print("gradcheck worst:", rep.max_rel_err, "at", rep.worst_param)
assert rep.max_rel_err < 1e-3

# Trainability predicates.
model.store.set_trainable(phase1_trainable)
tn = model.store.trainable_names()
assert all(not n.startswith("router.") for n in tn) and "bank.ref" not in tn
model.store.set_trainable(phase2_trainable)
assert all(n.startswith("router.") for n in model.store.trainable_names())
print("ALL MODEL SMOKE CHECKS PASSED")
