"""Corruption sweeps, CSV emission, and trajectory SVG rendering.

A sweep re-applies each degradation cell to clean features, evaluates the
model per cell (metrics plus routing accuracy against the post-corruption
availability labels), and emits one combined :class:`MetricReport` whose
``breakdown`` holds the per-cell reports.  The CSV and SVG emitters are
pure string builders with stable ordering and float formatting, so rerun
artifacts are byte-identical.
"""

from __future__ import annotations

import numpy as np

from .config import sim_hash
from .errors import DataError
from .metrics import MetricReport, evaluate, min_ade
from .model.core import TerraModel
from .sim.dataset import DatasetRecord
from .sim.degrade import DegradationSpec, apply_degradation
from .sim.scene import horizon_points

# Default evaluation grid: clean reference, graded corruption of each
# modality, and the two single-sensor blackouts the router is trained on.
DEFAULT_GRID = (
    DegradationSpec(),
    DegradationSpec(camera="gaussian_noise", camera_param=0.3),
    DegradationSpec(camera="blur", camera_param=1.0),
    DegradationSpec(camera="blackout"),
    DegradationSpec(lidar="gaussian_noise", lidar_param=0.3),
    DegradationSpec(lidar="sparsify", lidar_param=0.5),
    DegradationSpec(lidar="blackout"),
)


def check_compatible(model: TerraModel, manifest: dict) -> None:
    """Checkpoint/dataset compatibility: the data-generating config
    sections (geometry + sim) must hash identically."""
    want = sim_hash(model.cfg)
    got = manifest.get("sim_hash")
    if got != want:
        raise DataError(
            f"dataset sim config hash {got} does not match the checkpoint's "
            f"{want}; the model was trained for a different generator")


def degrade_records(records: list[DatasetRecord], spec: DegradationSpec,
                    seed: int) -> list[DatasetRecord]:
    """Fresh record copies with ``spec`` applied to the (clean) features."""
    out = []
    for rec in records:
        if not rec.degradation.is_clean:
            raise DataError(
                f"sweep cells re-corrupt clean records; record {rec.id} "
                f"already carries {rec.degradation.label()}")
        degraded = apply_degradation(rec.features, spec, (seed, rec.id))
        out.append(DatasetRecord(id=rec.id, scene=rec.scene, features=degraded,
                                 degradation=spec,
                                 routing_label=degraded.routing_label()))
    return out


def corruption_sweep(model: TerraModel, manifest: dict,
                     records: list[DatasetRecord],
                     grid: tuple[DegradationSpec, ...] = DEFAULT_GRID,
                     seed: int = 0, mode: str = "routed",
                     batch_size: int = 16) -> MetricReport:
    """Evaluate every grid cell; returns the combined report.

    Per-cell reports live in ``breakdown`` keyed by the cell label.  The
    combined top-level numbers are record-weighted means of the per-cell
    values (for BLEU too — a summary, not a pooled corpus score; the
    per-cell reports are the primary payload).
    """
    check_compatible(model, manifest)
    if not records:
        raise DataError("cannot sweep an empty record list")
    labels = [spec.label() for spec in grid]
    if len(set(labels)) != len(labels):
        raise DataError(f"duplicate sweep cells: {labels}")

    cells: dict[str, MetricReport] = {}
    for spec, label in zip(grid, labels):
        cell_records = degrade_records(records, spec, seed)
        cells[label] = evaluate(model, cell_records, mode=mode,
                                batch_size=batch_size)

    n_total = sum(rep.n_records for rep in cells.values())

    def wmean(get) -> float:
        return sum(get(rep) * rep.n_records for rep in cells.values()) / n_total

    field_names = sorted({name for rep in cells.values()
                          for name in rep.field_accuracy})
    combined_fields = {}
    for name in field_names:
        with_field = [rep for rep in cells.values() if name in rep.field_accuracy]
        total = sum(rep.n_records for rep in with_field)
        combined_fields[name] = sum(rep.field_accuracy[name] * rep.n_records
                                    for rep in with_field) / total
    routed = [rep for rep in cells.values() if rep.routing_accuracy is not None]
    combined_routing = None
    if routed:
        combined_routing = (sum(rep.routing_accuracy * rep.n_records
                                for rep in routed)
                            / sum(rep.n_records for rep in routed))
    return MetricReport(
        config_hash=cells[labels[0]].config_hash,
        n_records=n_total,
        bleu_1=wmean(lambda r: r.bleu_1),
        bleu_2=wmean(lambda r: r.bleu_2),
        bleu_4=wmean(lambda r: r.bleu_4),
        field_accuracy=combined_fields,
        macro_field_accuracy=wmean(lambda r: r.macro_field_accuracy),
        fde=wmean(lambda r: r.fde),
        fde_squared=wmean(lambda r: r.fde_squared),
        min_ade=wmean(lambda r: r.min_ade),
        routing_accuracy=combined_routing,
        breakdown=cells,
    )


# -- CSV ---------------------------------------------------------------------


def _metric_rows(rep: MetricReport) -> list[tuple[str, float]]:
    rows = [("bleu_1", rep.bleu_1), ("bleu_2", rep.bleu_2),
            ("bleu_4", rep.bleu_4), ("fde", rep.fde),
            ("fde_squared", rep.fde_squared), ("min_ade", rep.min_ade),
            ("macro_field_accuracy", rep.macro_field_accuracy)]
    rows += [(f"field:{name}", value)
             for name, value in sorted(rep.field_accuracy.items())]
    if rep.routing_accuracy is not None:
        rows.append(("routing_accuracy", rep.routing_accuracy))
    return rows


def sweep_csv(report: MetricReport) -> str:
    """(cell, metric, value) rows; cells sorted, then the combined totals."""
    lines = ["cell,metric,value"]
    for cell in sorted(report.breakdown):
        for metric, value in _metric_rows(report.breakdown[cell]):
            lines.append(f"{cell},{metric},{value!r}")
    for metric, value in _metric_rows(report):
        lines.append(f"combined,{metric},{value!r}")
    return "\n".join(lines) + "\n"


# -- SVG ---------------------------------------------------------------------

_SVG_CELL = 220
_SVG_PAD = 24


def build_panels(model: TerraModel, records: list[DatasetRecord],
                 mode: str = "routed", limit: int = 8,
                 batch_size: int = 16) -> list[dict]:
    """Per-record plot data: ground truth, predicted modes, best mode."""
    panels = []
    for start in range(0, min(len(records), limit), batch_size):
        batch = records[start:start + min(batch_size, limit - start)]
        feats = np.stack([rec.features.fused_tokens for rec in batch])
        traj = model.forward(feats, mode).trajectories.data
        for i, rec in enumerate(batch):
            gt = horizon_points(rec.scene.future_trajectory)
            _, best = min_ade(traj[i], gt)
            panels.append({"gt": gt, "modes": np.array(traj[i]), "best": best,
                           "label": f"record {rec.id} ({rec.scene.action})"})
    return panels


def _polyline(points, color: str, width: float, dashed: bool = False) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    dash = ' stroke-dasharray="4 3"' if dashed else ""
    return (f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{dash}/>')


def trajectory_svg(panels: list[dict]) -> str:
    """Small-multiple SVG: red = predicted modes (best solid, rest dashed),
    green = ground truth, ego origin marked; panels auto-scaled."""
    if not panels:
        raise DataError("nothing to plot")
    cols = min(4, len(panels))
    rows = (len(panels) + cols - 1) // cols
    width = cols * _SVG_CELL
    height = rows * _SVG_CELL + 18
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>',
             '<text x="6" y="13" font-size="11" fill="#333" '
             'font-family="sans-serif">red = predicted, green = ground truth'
             '</text>']
    for p_idx, panel in enumerate(panels):
        ox = (p_idx % cols) * _SVG_CELL
        oy = 18 + (p_idx // cols) * _SVG_CELL
        pts = np.concatenate([panel["gt"].reshape(-1, 2),
                              panel["modes"].reshape(-1, 2),
                              np.zeros((1, 2))])
        lo = pts.min(axis=0) - 0.5
        hi = pts.max(axis=0) + 0.5
        span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-6))
        scale = (_SVG_CELL - 2 * _SVG_PAD) / span

        def to_svg(xy, ox=ox, oy=oy, lo=lo, hi=hi, scale=scale):
            # ego x (forward) -> screen up, ego y (left) -> screen left
            return [(ox + _SVG_PAD + (hi[1] - y) * scale,
                     oy + _SVG_CELL - _SVG_PAD - (x - lo[0]) * scale)
                    for x, y in xy]

        parts.append(f'<rect x="{ox + 1}" y="{oy + 1}" '
                     f'width="{_SVG_CELL - 2}" height="{_SVG_CELL - 2}" '
                     'fill="none" stroke="#ccc"/>')
        origin = to_svg([(0.0, 0.0)])[0]
        parts.append(f'<circle cx="{origin[0]:.2f}" cy="{origin[1]:.2f}" '
                     'r="3" fill="#333"/>')
        for m_idx, mode_traj in enumerate(panel["modes"]):
            line = to_svg([(0.0, 0.0)] + [tuple(w) for w in mode_traj])
            parts.append(_polyline(line, "red", 1.8 if m_idx == panel["best"]
                                   else 1.0, dashed=m_idx != panel["best"]))
        gt_line = to_svg([(0.0, 0.0)] + [tuple(w) for w in panel["gt"]])
        parts.append(_polyline(gt_line, "green", 1.8))
        parts.append(f'<text x="{ox + 6}" y="{oy + 14}" font-size="10" '
                     f'fill="#333" font-family="sans-serif">{panel["label"]}'
                     '</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
