"""Supervision math: spline smoothing, ego-frame futures, action clustering.

Pose logs are smoothed with a clamped uniform cubic B-spline (least-squares
fit, de Boor evaluation), future 10-second segments are resampled at 0.5 s
into the ego frame at the query time, and a seeded K-means over the
vectorized segments builds a compact action vocabulary whose clusters map
onto the four driving actions by centroid statistics.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, InvariantViolation
from .vocab import ACTION

SPLINE_DEGREE = 3
STOP_PATH_LIMIT = 1.0     # meters of centroid path length below which a cluster is "stop"
LATERAL_THRESHOLD = 2.0   # meters of final lateral offset separating turns from straight
N_FUTURE_POINTS = 20
FUTURE_DT = 0.5


@dataclass
class PoseSequence:
    """World-frame (x, y, heading) samples at strictly increasing times."""

    timestamps: np.ndarray  # (N,)
    poses: np.ndarray       # (N, 3): x, y, heading (radians)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.poses = np.asarray(self.poses, dtype=np.float64)
        if self.timestamps.ndim != 1 or self.poses.shape != (self.timestamps.shape[0], 3):
            raise DataError(
                f"pose sequence shapes: timestamps {self.timestamps.shape}, "
                f"poses {self.poses.shape}; expected (N,) and (N, 3)")
        if self.timestamps.shape[0] < SPLINE_DEGREE + 1:
            raise DataError(
                f"need at least {SPLINE_DEGREE + 1} poses for cubic fitting, "
                f"got {self.timestamps.shape[0]}")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError("pose timestamps must be strictly increasing")

    @property
    def t_first(self) -> float:
        return float(self.timestamps[0])

    @property
    def t_last(self) -> float:
        return float(self.timestamps[-1])

    @classmethod
    def from_text(cls, text: str) -> "PoseSequence":
        """Parse 't x y heading' per line ('#' comments allowed)."""
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"pose line {lineno}: expected 't x y heading', got {line!r}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise DataError(f"pose line {lineno}: non-numeric field in {line!r}") from None
        if not rows:
            raise DataError("pose file contains no samples")
        arr = np.asarray(rows)
        return cls(timestamps=arr[:, 0], poses=arr[:, 1:4])

    def to_text(self) -> str:
        lines = [f"{t!r} {x!r} {y!r} {h!r}"
                 for t, (x, y, h) in zip(self.timestamps, self.poses)]
        return "\n".join(lines) + "\n"


# -- B-spline fitting ----------------------------------------------------------


def _clamped_uniform_knots(n_ctrl: int, t0: float, t1: float) -> np.ndarray:
    """Clamped knot vector with uniform interior knots over [t0, t1]."""
    k = SPLINE_DEGREE
    n_interior = n_ctrl - k - 1
    interior = np.linspace(t0, t1, n_interior + 2)[1:-1]
    return np.concatenate([np.full(k + 1, t0), interior, np.full(k + 1, t1)])


def _bspline_basis(knots: np.ndarray, n_ctrl: int, times: np.ndarray) -> np.ndarray:
    """Cox-de Boor basis matrix B with B[i, j] = N_j(times[i])."""
    k = SPLINE_DEGREE
    times = np.asarray(times, dtype=np.float64)
    n_knots = knots.shape[0]
    basis = np.zeros((times.shape[0], n_knots - 1))
    # Degree-0: indicator of the half-open knot span, closed at the far end.
    for j in range(n_knots - 1):
        basis[:, j] = (knots[j] <= times) & (times < knots[j + 1])
    last = knots[-1]
    end_span = np.searchsorted(knots, last, side="left") - 1
    basis[times == last, end_span] = 1.0
    for deg in range(1, k + 1):
        nxt = np.zeros((times.shape[0], n_knots - 1 - deg))
        for j in range(n_knots - 1 - deg):
            left_den = knots[j + deg] - knots[j]
            right_den = knots[j + deg + 1] - knots[j + 1]
            term = 0.0
            if left_den > 0:
                term = (times - knots[j]) / left_den * basis[:, j]
            if right_den > 0:
                term = term + (knots[j + deg + 1] - times) / right_den * basis[:, j + 1]
            nxt[:, j] = term
        basis = nxt
    return basis[:, :n_ctrl]


@dataclass
class SplineFit:
    """Least-squares clamped cubic B-spline through a set of channels."""

    knots: np.ndarray
    control: np.ndarray  # (n_ctrl, channels)
    t0: float
    t1: float
    residual: float = 0.0

    def __call__(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        if np.any(times < self.t0 - 1e-12) or np.any(times > self.t1 + 1e-12):
            raise DataError(
                f"sample times outside fitted range [{self.t0}, {self.t1}]")
        times = np.clip(times, self.t0, self.t1)
        basis = _bspline_basis(self.knots, self.control.shape[0], times)
        return basis @ self.control


def fit_bspline(times: np.ndarray, values: np.ndarray,
                exact: bool = False) -> SplineFit:
    """Fit one clamped uniform cubic spline per value channel.

    ``exact`` uses one control point per sample (interpolating fit for
    clean poses); the default uses max(4, N // 3) control points as a
    least-squares smoother.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = times.shape[0]
    if n < SPLINE_DEGREE + 1:
        raise DataError(f"need at least {SPLINE_DEGREE + 1} samples, got {n}")
    n_ctrl = n if exact else max(SPLINE_DEGREE + 1, n // 3)
    knots = _clamped_uniform_knots(n_ctrl, float(times[0]), float(times[-1]))
    basis = _bspline_basis(knots, n_ctrl, times)
    control, residuals, rank, _sv = np.linalg.lstsq(basis, values, rcond=None)
    if rank < n_ctrl:
        raise DataError(
            f"spline system is rank-deficient (rank {rank} < {n_ctrl} control "
            f"points); sample times do not cover every knot span")
    residual = float(np.sqrt(np.mean((basis @ control - values) ** 2)))
    return SplineFit(knots=knots, control=control, t0=float(times[0]),
                     t1=float(times[-1]), residual=residual)


def bspline_smooth(seq: PoseSequence, sample_times, exact: bool = False) -> np.ndarray:
    """Smoothed (x, y) world positions at the given times."""
    sample_times = np.atleast_1d(np.asarray(sample_times, dtype=np.float64))
    if np.any(sample_times < seq.t_first) or np.any(sample_times > seq.t_last):
        raise DataError(
            f"sample times outside pose range [{seq.t_first}, {seq.t_last}]")
    fit = fit_bspline(seq.timestamps, seq.poses[:, :2], exact=exact)
    return fit(sample_times)


def ego_future_segment(seq: PoseSequence, t_now: float,
                       exact: bool = False) -> np.ndarray:
    """20 ego-frame (x forward, y left) points over (t_now, t_now + 10 s].

    World positions come from the spline fit; the ego frame is anchored at
    the smoothed position and the (unwrapped, spline-smoothed) heading at
    ``t_now``.
    """
    horizon = N_FUTURE_POINTS * FUTURE_DT
    if t_now < seq.t_first or t_now + horizon > seq.t_last + 1e-9:
        raise DataError(
            f"future segment [{t_now}, {t_now + horizon}] exceeds pose range "
            f"[{seq.t_first}, {seq.t_last}]")
    xy_fit = fit_bspline(seq.timestamps, seq.poses[:, :2], exact=exact)
    heading_fit = fit_bspline(seq.timestamps, np.unwrap(seq.poses[:, 2]),
                              exact=exact)
    times = t_now + FUTURE_DT * np.arange(1, N_FUTURE_POINTS + 1)
    times = np.minimum(times, seq.t_last)
    origin = xy_fit(np.array([t_now]))[0]
    heading = float(heading_fit(np.array([t_now]))[0, 0])
    delta = xy_fit(times) - origin
    c, s = np.cos(heading), np.sin(heading)
    ego_x = c * delta[:, 0] + s * delta[:, 1]
    ego_y = -s * delta[:, 0] + c * delta[:, 1]
    return np.stack([ego_x, ego_y], axis=1)


# -- K-means action vocabulary -------------------------------------------------


@dataclass
class ActionVocabulary:
    centers: np.ndarray          # (K_c, 40) vectorized 20-point trajectories
    actions: list[str]           # cluster index -> action name
    objective: float
    seed: int
    k: int = field(init=False)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.k = self.centers.shape[0]
        if len(self.actions) != self.k:
            raise DataError(f"{self.k} centers but {len(self.actions)} actions")
        unknown = set(self.actions) - set(ACTION)
        if unknown:
            raise DataError(f"unknown actions in vocabulary: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "actions": list(self.actions),
                "objective": self.objective, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionVocabulary":
        return cls(centers=np.asarray(d["centers"]), actions=list(d["actions"]),
                   objective=float(d["objective"]), seed=int(d["seed"]))


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ center choice."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = points[rng.integers(n, size=k - j)]
            break
        probs = d2 / total
        centers[j] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray,
           max_iters: int = 100) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd iterations to an assignment fixpoint; objective must never rise."""
    prev_obj = np.inf
    assign = None
    for _ in range(max_iters):
        d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        obj = float(d2[np.arange(points.shape[0]), new_assign].sum())
        if obj > prev_obj + 1e-9:
            raise InvariantViolation(
                f"k-means objective increased: {prev_obj} -> {obj}")
        if assign is not None and np.array_equal(new_assign, assign):
            return centers, assign, obj
        assign = new_assign
        prev_obj = obj
        empties = []
        for j in range(centers.shape[0]):
            members = points[assign == j]
            if members.shape[0] == 0:
                empties.append(j)
            else:
                centers[j] = members.mean(axis=0)
        if empties:
            # Re-seed each empty cluster at a distinct farthest-from-its-center
            # point; an empty cluster has no members, so moving its center
            # cannot raise the objective.
            order = np.argsort(-d2[np.arange(points.shape[0]), assign])
            for j, far in zip(empties, order):
                centers[j] = points[far]
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    assign = np.argmin(d2, axis=1)
    obj = float(d2[np.arange(points.shape[0]), assign].sum())
    return centers, assign, obj


def _centroid_action(center: np.ndarray) -> str:
    """Map one vectorized centroid trajectory onto a driving action."""
    pts = center.reshape(N_FUTURE_POINTS, 2)
    steps = np.diff(np.vstack([[0.0, 0.0], pts]), axis=0)
    path_len = float(np.sqrt((steps ** 2).sum(axis=1)).sum())
    if path_len < STOP_PATH_LIMIT:
        return "stop"
    y_final = float(pts[-1, 1])
    if y_final > LATERAL_THRESHOLD:
        return "turn_left"
    if y_final < -LATERAL_THRESHOLD:
        return "turn_right"
    return "go_straight"


def _exhaustive_best(points: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Exact minimum-SSE clustering by enumerating all surjective assignments.

    Only called for tiny instances (``k ** n`` small).  Ties keep the first
    assignment in lexicographic order, which is already label-canonical.
    """
    n = points.shape[0]
    best_obj = np.inf
    best_assign: tuple[int, ...] | None = None
    for assign in itertools.product(range(k), repeat=n):
        if len(set(assign)) < k:
            continue
        a = np.asarray(assign)
        obj = 0.0
        for j in range(k):
            members = points[a == j]
            obj += float(((members - members.mean(axis=0)) ** 2).sum())
        if obj < best_obj:
            best_obj = obj
            best_assign = assign
    a = np.asarray(best_assign)
    centers = np.stack([points[a == j].mean(axis=0) for j in range(k)])
    return centers, best_obj


def kmeans_actions(trajectories: np.ndarray, k: int = 8, seed: int = 0,
                   n_init: int = 10) -> ActionVocabulary:
    """Seeded k-means++ / Lloyd vocabulary over vectorized trajectories.

    Runs ``n_init`` seeded restarts and keeps the lowest objective (first
    on ties), then maps each centroid to an action by its path statistics.
    Instances small enough to enumerate (``k ** n <= 4096``) are solved
    exactly instead: restarted Lloyd can converge to local minima that no
    bounded neighborhood search escapes, and at that size the true optimum
    costs less than one restart.  ``seed`` only affects the stochastic path.
    """
    points = np.asarray(trajectories, dtype=np.float64)
    if points.ndim == 3:
        points = points.reshape(points.shape[0], -1)
    if points.shape[0] < k:
        raise ConfigError(
            f"k-means needs at least k={k} trajectories, got {points.shape[0]}")
    if points.shape[0] <= 12 and k ** points.shape[0] <= 4096:
        centers, obj = _exhaustive_best(points, k)
    else:
        rng = np.random.default_rng(seed)
        best: tuple[float, np.ndarray] | None = None
        for _ in range(n_init):
            centers = _kmeans_pp_init(points, k, rng)
            centers, _assign, obj = _lloyd(points, centers)
            if best is None or obj < best[0] - 1e-12:
                best = (obj, centers.copy())
        obj, centers = best
    actions = [_centroid_action(c) for c in centers]
    return ActionVocabulary(centers=centers, actions=actions,
                            objective=obj, seed=seed)


def label_action(trajectory: np.ndarray, vocab: ActionVocabulary) -> str:
    """Nearest-center action; ties resolve to the lowest cluster index."""
    v = np.asarray(trajectory, dtype=np.float64).reshape(-1)
    if v.shape[0] != vocab.centers.shape[1]:
        raise DataError(
            f"trajectory length {v.shape[0]} != vocabulary width {vocab.centers.shape[1]}")
    d2 = np.sum((vocab.centers - v) ** 2, axis=1)
    return vocab.actions[int(np.argmin(d2))]
