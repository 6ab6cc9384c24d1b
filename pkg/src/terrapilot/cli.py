"""Command-line entry point: gen | label | train | eval | sweep | plot | selfcheck.

Every command resolves its paths against ``--workdir``, never mutates its
inputs, and writes two provenance files next to its outputs: a
``resolved.cfg`` snapshot of the full configuration it ran with and a
``run.json`` carrying the tool version, seed, and sha256 checksums of all
inputs — enough to reproduce the artifacts bit-exactly.  Exit codes:
0 ok, 2 usage/config error, 3 data error, 4 invariant violation; errors
print one machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (PipelineConfig, build_config, config_hash, load_config,
                     parse_config_text, replace, resolve_config, sim_hash)
from .errors import (ConfigError, DataError, InvariantViolation,
                     TerrapilotError, UsageError)
from .labeling import (FUTURE_DT, LATERAL_THRESHOLD, N_FUTURE_POINTS,
                       STOP_PATH_LIMIT, PoseSequence, ego_future_segment,
                       kmeans_actions, label_action)
from .metrics import MetricReport, evaluate
from .model.core import TerraModel
from .sim.dataset import (dataset_checksums, generate_records, read_dataset,
                          write_dataset)
from .sweep import (DEFAULT_GRID, build_panels, check_compatible,
                    corruption_sweep, sweep_csv, trajectory_svg)
from .training import train_phase1, train_phase2

PHASE2_DEFAULT_LR = 3e-3
SEGMENT_SECONDS = N_FUTURE_POINTS * FUTURE_DT

_ERROR_KINDS = {2: "usage", 3: "data", 4: "invariant"}


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad flags through the package error taxonomy."""

    def error(self, message: str):  # noqa: D102 - argparse contract
        raise UsageError(message)


# -- shared plumbing -----------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve(args, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else Path(args.workdir) / p


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    return path


def _config_entries(args) -> dict[str, str]:
    """File entries with ``--set`` overrides applied last."""
    entries: dict[str, str] = {}
    cfg_path = _resolve(args, getattr(args, "config", None))
    if cfg_path is not None:
        if not cfg_path.is_file():
            raise ConfigError(f"config file not found: {cfg_path}")
        entries.update(parse_config_text(cfg_path.read_text(), cfg_path.parent))
    for ov in getattr(args, "set", None) or []:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        key, _, value = ov.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def _write_run_files(out_dir: Path, args, seed: int | None,
                     cfg_text: str | None, inputs: dict[str, object],
                     outputs: list[str], params: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg_text is not None:
        (out_dir / "resolved.cfg").write_text(cfg_text)
    run = {
        "tool": "terrapilot",
        "version": __version__,
        "command": args.command,
        "seed": seed,
        "inputs": inputs,
        "outputs": sorted(outputs),
    }
    if params:
        run["params"] = params
    (out_dir / "run.json").write_text(
        json.dumps(run, indent=1, sort_keys=True) + "\n")


def _load_model(args, ckpt_flag: str = "checkpoint") -> tuple[TerraModel, dict, Path]:
    path = _require_file(_resolve(args, getattr(args, ckpt_flag)), "checkpoint")
    model, meta = TerraModel.load(path)
    return model, meta, path


def _read_records(args, flag: str = "data") -> tuple[dict, list, Path]:
    path = _resolve(args, getattr(args, flag))
    if path is None or not path.is_dir():
        raise DataError(f"dataset directory not found: {path}")
    manifest, records = read_dataset(path)
    return manifest, records, path


# -- gen -------------------------------------------------------------------


def cmd_gen(args) -> int:
    entries = _config_entries(args)
    cfg = build_config(entries)
    out = _resolve(args, args.out)
    records = generate_records(args.count, seed=args.seed, cfg=cfg,
                               corrupt=args.corrupt)
    write_dataset(records, out, cfg, seed=args.seed)
    inputs: dict[str, object] = {}
    if args.config:
        inputs["config"] = _sha256(_resolve(args, args.config))
    _write_run_files(out, args, args.seed, resolve_config(cfg), inputs,
                     ["manifest.json", "records.jsonl", "features.bin"],
                     params={"count": args.count, "corrupt": args.corrupt})
    print(f"gen: wrote {len(records)} records to {out}")
    return 0


# -- label -----------------------------------------------------------------


def _pose_paths(args) -> list[Path]:
    paths: list[Path] = []
    for raw in args.poses:
        p = _resolve(args, raw)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.txt")))
        elif p.is_file():
            paths.append(p)
        else:
            raise DataError(f"pose input not found: {p}")
    if not paths:
        raise DataError("no pose files found under the given inputs")
    return paths


def cmd_label(args) -> int:
    out = _resolve(args, args.out)
    inputs: dict[str, object] = {}
    rows: list[dict] = []
    segments: list[np.ndarray] = []
    vocab_extra: dict[str, object] = {}

    if args.poses:
        paths = _pose_paths(args)
        for path in paths:
            inputs[path.name] = _sha256(path)
            seq = PoseSequence.from_text(path.read_text())
            times = [float(t) for t in seq.timestamps
                     if t + SEGMENT_SECONDS <= seq.t_last + 1e-9]
            if not times:
                raise DataError(f"{path.name}: no frame has {SEGMENT_SECONDS:.0f}s "
                                "of future data")
            for t_now in times:
                seg = ego_future_segment(seq, t_now, exact=args.spline_exact)
                segments.append(seg.reshape(-1))
                rows.append({"source": path.name, "t_now": t_now,
                             "trajectory": seg.tolist()})
    else:
        manifest, records, data_path = _read_records(args)
        inputs["dataset"] = dataset_checksums(data_path)
        vocab_extra["dataset_config_hash"] = manifest["config_hash"]
        for rec in records:
            seg = np.asarray(rec.scene.future_trajectory, dtype=np.float64)
            segments.append(seg.reshape(-1))
            rows.append({"id": rec.id, "trajectory": seg.tolist()})

    if len(segments) < args.clusters:
        raise DataError(f"{len(segments)} trajectories cannot support "
                        f"{args.clusters} clusters")
    vocab = kmeans_actions(np.stack(segments), k=args.clusters, seed=args.seed)
    for row, seg in zip(rows, segments):
        row["action"] = label_action(seg, vocab)

    out.mkdir(parents=True, exist_ok=True)
    vocab_doc = {
        "vocabulary": vocab.to_dict(),
        "stop_path_limit": STOP_PATH_LIMIT,
        "lateral_threshold": LATERAL_THRESHOLD,
        **vocab_extra,
    }
    (out / "vocab.json").write_text(
        json.dumps(vocab_doc, indent=1, sort_keys=True) + "\n")
    with open(out / "labels.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    cfg_lines = [f"label.clusters = {args.clusters}",
                 f"label.seed = {args.seed}",
                 f"label.spline_exact = {args.spline_exact}"]
    _write_run_files(out, args, args.seed, "\n".join(cfg_lines) + "\n", inputs,
                     ["vocab.json", "labels.jsonl"])
    counts: dict[str, int] = {}
    for row in rows:
        counts[row["action"]] = counts.get(row["action"], 0) + 1
    print(f"label: {len(rows)} frames -> {out} "
          f"({', '.join(f'{k}={v}' for k, v in sorted(counts.items()))})")
    return 0


# -- train -----------------------------------------------------------------


def _phase2_config(args, entries: dict[str, str], ckpt_meta: dict) -> PipelineConfig:
    """Phase-2 config: checkpoint sections plus user train.* entries."""
    foreign = sorted(k for k in entries if not k.startswith("train."))
    if foreign:
        raise ConfigError(
            f"phase 2 takes geometry/sim/model settings from the checkpoint; "
            f"drop {foreign}")
    merged = parse_config_text(ckpt_meta["config"])
    merged.update(entries)
    if "train.lr" not in entries:
        merged["train.lr"] = repr(PHASE2_DEFAULT_LR)
    return build_config(merged)


def cmd_train(args) -> int:
    entries = _config_entries(args)
    entries["train.phase"] = str(args.phase)
    if args.seed is not None:
        entries["train.seed"] = str(args.seed)
    out = _resolve(args, args.out)
    inputs: dict[str, object] = {}
    if args.config:
        inputs["config"] = _sha256(_resolve(args, args.config))

    if args.phase == 1:
        if args.init:
            raise UsageError("phase 1 trains from scratch; --init is for phase 2")
        cfg = build_config(entries)
        model = TerraModel(cfg, seed=cfg.train.seed)
    else:
        if not args.init:
            raise UsageError("train --phase 2 requires --init with a "
                             "phase-1 checkpoint")
        init_path = _require_file(_resolve(args, args.init), "init checkpoint")
        inputs["init_checkpoint"] = _sha256(init_path)
        base, meta = TerraModel.load(init_path)
        if meta.get("phase") != 1:
            raise DataError(f"--init must be a phase-1 checkpoint; "
                            f"{init_path} carries phase {meta.get('phase')!r}")
        cfg = _phase2_config(args, entries, meta)
        model = TerraModel(cfg, seed=base.seed, store=base.store)

    manifest, records, data_path = _read_records(args)
    inputs["dataset"] = dataset_checksums(data_path)
    check_compatible(model, manifest)

    log = train_phase1(model, records) if args.phase == 1 \
        else train_phase2(model, records)

    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "checkpoint.npz", phase=args.phase)
    (out / "trainlog.jsonl").write_text(log.to_jsonl())
    _write_run_files(out, args, cfg.train.seed, resolve_config(cfg), inputs,
                     ["checkpoint.npz", "trainlog.jsonl"])
    last = log.epochs[-1]
    line = ", ".join(f"{k}={v:.4f}" for k, v in sorted(last.items())
                     if k not in ("epoch", "wall_time_s"))
    print(f"train: phase {args.phase}, {len(log.epochs)} epochs on "
          f"{log.n_records} records -> {out} (final {line})")
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    model, meta, ckpt_path = _load_model(args)
    manifest, records, data_path = _read_records(args)
    check_compatible(model, manifest)
    report = evaluate(model, records, mode=args.mode,
                      batch_size=args.batch_size,
                      config_hash_value=meta["config_hash"])
    out = _resolve(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    _write_run_files(out, args, None, resolve_config(model.cfg),
                     {"checkpoint": _sha256(ckpt_path),
                      "dataset": dataset_checksums(data_path)},
                     ["report.json"], params={"mode": args.mode})
    print(f"eval: {report.n_records} records, mode {args.mode} -> {out} "
          f"(macro_field_accuracy {report.macro_field_accuracy:.4f}, "
          f"bleu_4 {report.bleu_4:.4f}, min_ade {report.min_ade:.4f})")
    return 0


# -- sweep ---------------------------------------------------------------------


def cmd_sweep(args) -> int:
    model, meta, ckpt_path = _load_model(args)
    manifest, records, data_path = _read_records(args)
    report = corruption_sweep(model, manifest, records, grid=DEFAULT_GRID,
                              seed=args.seed, mode=args.mode,
                              batch_size=args.batch_size)
    out = _resolve(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(report.to_json())
    _write_run_files(out, args, args.seed, resolve_config(model.cfg),
                     {"checkpoint": _sha256(ckpt_path),
                      "dataset": dataset_checksums(data_path)},
                     ["sweep.json"], params={"mode": args.mode})
    cells = ", ".join(f"{name}={cell.macro_field_accuracy:.3f}"
                      for name, cell in sorted(report.breakdown.items()))
    print(f"sweep: {len(report.breakdown)} cells -> {out} "
          f"(macro field accuracy per cell: {cells})")
    return 0


# -- plot ----------------------------------------------------------------------


def cmd_plot(args) -> int:
    report_path = _require_file(_resolve(args, args.report), "sweep report")
    report = MetricReport.from_json(report_path.read_text())
    out = _resolve(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(report))
    outputs = ["sweep.csv"]
    inputs: dict[str, object] = {"report": _sha256(report_path)}
    cfg_text = None

    if bool(args.checkpoint) != bool(args.data):
        raise UsageError("--checkpoint and --data must be given together "
                         "(both are needed to draw trajectories)")
    if args.checkpoint:
        model, meta, ckpt_path = _load_model(args)
        manifest, records, data_path = _read_records(args)
        check_compatible(model, manifest)
        panels = build_panels(model, records, mode=args.mode, limit=args.limit)
        (out / "trajectories.svg").write_text(trajectory_svg(panels))
        outputs.append("trajectories.svg")
        inputs["checkpoint"] = _sha256(ckpt_path)
        inputs["dataset"] = dataset_checksums(data_path)
        cfg_text = resolve_config(model.cfg)

    _write_run_files(out, args, None, cfg_text, inputs, outputs)
    print(f"plot: wrote {', '.join(outputs)} to {out}")
    return 0


# -- selfcheck -------------------------------------------------------------------


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all

    results = run_all(seed=args.seed)
    for result in results:
        print(result.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise InvariantViolation(f"selfcheck failures: {', '.join(failed)}")
    print(f"selfcheck: all {len(results)} oracle suites passed")
    return 0


# -- argument wiring -------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="terrapilot",
                     description="Synthetic off-road perception-to-planning "
                                 "pipeline: data, training, evaluation.")
    parser.add_argument("--workdir", default=".",
                        help="base directory for all relative paths")
    parser.add_argument("--version", action="version",
                        version=f"terrapilot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def add_config_flags(p: _Parser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, applied after the file")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    add_config_flags(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corrupt", choices=("none", "conditional"), default="none",
                   help="optionally apply per-record sensor degradations")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label",
                       help="build an action vocabulary and per-frame labels")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--poses", nargs="+",
                       help="pose files ('t x y heading' per line) or "
                            "directories of *.txt")
    group.add_argument("--data", help="generated dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spline-exact", action="store_true",
                   help="interpolate poses exactly instead of least-squares")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="run one training phase")
    add_config_flags(p)
    p.add_argument("--phase", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--init", help="phase-1 checkpoint to start phase 2 from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("routed", "stacked", "fusion_only"),
                   default="routed")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate under a corruption grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("routed", "stacked", "fusion_only"),
                   default="routed")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render a sweep report to CSV and SVG")
    p.add_argument("--report", required=True, help="sweep.json from `sweep`")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="needed for the trajectory SVG")
    p.add_argument("--data", help="needed for the trajectory SVG")
    p.add_argument("--mode", choices=("routed", "stacked", "fusion_only"),
                   default="routed")
    p.add_argument("--limit", type=int, default=8,
                   help="number of trajectory panels")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("selfcheck", help="run the fast oracle suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except TerrapilotError as exc:
        code = exc.exit_code
        kind = _ERROR_KINDS.get(code, "error")
        msg = json.dumps(" ".join(str(exc).split()))
        print(f"terrapilot: code={code} kind={kind} msg={msg}", file=sys.stderr)
        return code
    except OSError as exc:
        msg = json.dumps(" ".join(str(exc).split()))
        print(f"terrapilot: code=3 kind=data msg={msg}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
