"""Fast oracle suite behind ``terrapilot selfcheck``.

Each check validates one piece of contract math against an independent
reference: autodiff against central finite differences, the locality-mask
builder against a per-token-index scalar brute force, BLEU against
hand-counted examples, and k-means against exhaustive assignment
enumeration.  The whole suite is sized to finish in well under two
minutes so CI can run it on every change without training anything.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .config import GeometryConfig, PipelineConfig
from .labeling import kmeans_actions
from .metrics import bleu_n
from .model.bridge import build_local_mask
from .model.core import TerraModel
from .model.heads import field_targets
from .nn import layers as L
from .nn import tensor as T
from .nn.gradcheck import finite_diff_check
from .nn.tensor import Tensor
from .sim.dataset import generate_records
from .sim.scene import horizon_points


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"selfcheck {self.name}: {status} ({self.detail}, {self.seconds:.1f}s)"


# -- gradient check --------------------------------------------------------


def check_gradients(coords_per_tensor: int = 6) -> CheckResult:
    """Full phase-1 loss on one record vs central differences."""
    t0 = time.perf_counter()
    cfg = PipelineConfig()
    rec = generate_records(1, seed=5, cfg=cfg)[0]
    model = TerraModel(cfg, seed=3)
    feats = np.stack([rec.features.fused_tokens])
    targets = [field_targets(rec.scene, cfg.model)]
    horizon = np.stack([horizon_points(rec.scene.future_trajectory)])

    def loss_fn():
        out = model.forward(feats, "stacked")
        return model.phase1_loss(out, targets, horizon)["l_total"]

    report = finite_diff_check(loss_fn, model.store, epsilon=1e-5,
                               tolerance=1e-3,
                               coords_per_tensor=coords_per_tensor)
    return CheckResult("gradients", report.passed,
                       f"max_rel_err {report.max_rel_err:.2e} "
                       f"over {report.n_evaluations} evaluations",
                       time.perf_counter() - t0)


# -- locality mask ----------------------------------------------------------


def brute_force_mask(raw_ref: np.ndarray, window_bev: int, window_cam: int,
                     geom: GeometryConfig, near_clip: float = 0.1) -> np.ndarray:
    """Scalar re-derivation of the locality rule over every token index.

    Projects the squashed reference point with plain ``math`` calls and
    tests each token's inf-norm window membership one index at a time;
    shares no array code with the production builder.
    """
    x, y, z = (float(v) for v in raw_ref)
    unit = lambda v: 0.5 * (math.tanh(v) + 1.0)  # noqa: E731 - tiny local helper
    px = geom.x_min + unit(x) * (geom.x_max - geom.x_min)
    py = geom.y_min + unit(y) * (geom.y_max - geom.y_min)
    pz = geom.z_min + unit(z) * (geom.z_max - geom.z_min)

    def clamp(v: int, hi: int) -> int:
        return 0 if v < 0 else (hi - 1 if v >= hi else v)

    row_l = clamp(math.floor((px - geom.x_min) / geom.bev_cell_x), geom.bev_rows)
    col_l = clamp(math.floor((py - geom.y_min) / geom.bev_cell_y), geom.bev_cols)

    depth, right, down = px, -py, geom.cam_height - pz
    tan_h = math.tan(math.radians(geom.cam_hfov_deg) / 2.0)
    tan_v = math.tan(math.radians(geom.cam_vfov_deg) / 2.0)
    u = right / (max(depth, near_clip) * tan_h)
    v = down / (max(depth, near_clip) * tan_v)
    flagged = depth < near_clip or abs(u) > 1.0 or abs(v) > 1.0
    col_c = clamp(math.floor((u + 1.0) / 2.0 * geom.cam_cols), geom.cam_cols)
    row_c = clamp(math.floor((v + 1.0) / 2.0 * geom.cam_rows), geom.cam_rows)

    out = np.zeros(geom.n_tokens)
    for tok in range(geom.n_tokens):
        if tok < geom.n_bev_tokens:
            r, c = tok // geom.bev_cols, tok % geom.bev_cols
            hit = max(abs(r - row_l), abs(c - col_l)) <= window_bev / 2.0
        else:
            r = (tok - geom.n_bev_tokens) // geom.cam_cols
            c = (tok - geom.n_bev_tokens) % geom.cam_cols
            hit = (not flagged
                   and max(abs(r - row_c), abs(c - col_c)) <= window_cam / 2.0)
        out[tok] = 1.0 if hit else 0.0
    return out


def random_geometry(rng: np.random.Generator) -> GeometryConfig:
    return GeometryConfig(
        bev_rows=int(rng.integers(2, 9)), bev_cols=int(rng.integers(2, 9)),
        cam_rows=int(rng.integers(2, 9)), cam_cols=int(rng.integers(2, 9)),
        x_min=0.0, x_max=float(rng.uniform(8.0, 40.0)),
        y_min=-float(rng.uniform(4.0, 24.0)), y_max=float(rng.uniform(4.0, 24.0)),
        z_min=0.0, z_max=float(rng.uniform(2.0, 6.0)),
        cam_height=float(rng.uniform(0.8, 2.4)),
        cam_hfov_deg=float(rng.uniform(70.0, 140.0)),
        cam_vfov_deg=float(rng.uniform(40.0, 100.0)))


def check_masks(n_cases: int = 1000, seed: int = 0) -> CheckResult:
    """Randomized (reference, window, geometry) cases vs the brute force."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    from .geometry import bev_cell, cam_cell, squash_reference

    mismatches = 0
    for _ in range(n_cases):
        geom = random_geometry(rng)
        raw = rng.normal(0.0, 1.5, size=3)
        w_l, w_c = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        ref = squash_reference(raw, geom)
        row_l, col_l = bev_cell(ref, geom)
        row_c, col_c, flagged = cam_cell(ref, geom)
        fast = build_local_mask((int(row_l), int(col_l)),
                                (int(row_c), int(col_c)),
                                w_l, w_c, geom, bool(flagged))
        brute = brute_force_mask(raw, w_l, w_c, geom)
        if not np.array_equal(fast, brute):
            mismatches += 1
    return CheckResult("locality_mask", mismatches == 0,
                       f"{n_cases} randomized cases, {mismatches} mismatches",
                       time.perf_counter() - t0)


# -- BLEU and cross-entropy ---------------------------------------------------


def check_bleu() -> CheckResult:
    """Hand-counted BLEU values plus the uniform cross-entropy identity."""
    t0 = time.perf_counter()
    failures: list[str] = []

    cand, refs = [["a", "b", "c", "d"]], [["a", "b", "c", "x"]]
    if abs(bleu_n(cand, refs, 1) - 0.75) > 1e-9:
        failures.append(f"unigram {bleu_n(cand, refs, 1)!r} != 3/4")
    if abs(bleu_n(cand, refs, 2) - math.sqrt(0.5)) > 1e-9:
        failures.append(f"bigram {bleu_n(cand, refs, 2)!r} != sqrt(1/2)")
    ident = [["x", "y", "z", "w", "v"]]
    if bleu_n(ident, ident, 4) != 1.0:
        failures.append("identity BLEU-4 != 1")
    if bleu_n([["p", "q"]], [["x", "y"]], 1) != 0.0:
        failures.append("zero-overlap BLEU-1 != 0")

    probs = T.softmax(Tensor(np.zeros((1, 3))), axis=-1)
    ce = L.cross_entropy(probs, np.array([[1.0, 0.0, 0.0]])).item()
    if abs(ce - math.log(3.0)) > 1e-9:
        failures.append(f"uniform-3 cross-entropy {ce!r} != ln 3")

    detail = "; ".join(failures) if failures else \
        "hand-counted n-gram cases and ln-3 identity"
    return CheckResult("bleu", not failures, detail, time.perf_counter() - t0)


# -- k-means ------------------------------------------------------------------


def _brute_force_sse(points: np.ndarray, k: int) -> float:
    best = math.inf
    n = points.shape[0]
    for assign in itertools.product(range(k), repeat=n):
        if len(set(assign)) != k:
            continue
        sse = 0.0
        labels = np.asarray(assign)
        for j in range(k):
            members = points[labels == j]
            sse += float(((members - members.mean(axis=0)) ** 2).sum())
        best = min(best, sse)
    return best


def check_kmeans(trials: int = 100, seed: int = 0) -> CheckResult:
    """Vocabulary objective equals the exhaustive 8-point, k=2 optimum."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        points = rng.normal(0.0, rng.uniform(0.5, 3.0), size=(8, 40))
        vocab = kmeans_actions(points, k=2, seed=trial)
        brute = _brute_force_sse(points, 2)
        worst = max(worst, abs(vocab.objective - brute))
    return CheckResult("kmeans", worst <= 1e-9,
                       f"{trials} trials, worst objective gap {worst:.2e}",
                       time.perf_counter() - t0)


# -- suite --------------------------------------------------------------------


def run_all(seed: int = 0) -> list[CheckResult]:
    return [
        check_gradients(),
        check_masks(seed=seed),
        check_bleu(),
        check_kmeans(seed=seed),
    ]
