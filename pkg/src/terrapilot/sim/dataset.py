"""Dataset container: manifest + record headers + binary feature sidecar.

A dataset directory holds
  manifest.json   format/version, count, seed, resolved config + hashes,
                  sha256 of the two payload files
  records.jsonl   one JSON header per record (scene, degradation, routing
                  label, byte offsets into the sidecar)
  features.bin    little-endian float32 feature blocks, LiDAR block first,
                  in record id order

Writes are single-writer in id order, so identical (config, seed) runs
produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import PipelineConfig, config_hash, resolve_config, sim_hash
from ..errors import DataError
from .degrade import DegradationSpec, apply_degradation, sample_conditional_degradation
from .render import ModalityFeatureSet, render_features
from .scene import SceneState, sample_scene

FORMAT_TAG = "terrapilot-dataset"
FORMAT_VERSION = 1
FEATURE_DTYPE = np.dtype("<f4")


@dataclass
class DatasetRecord:
    id: int
    scene: SceneState
    features: ModalityFeatureSet
    degradation: DegradationSpec
    routing_label: tuple[int, int, int]


def generate_records(count: int, seed: int, cfg: PipelineConfig,
                     corrupt: str = "none") -> list[DatasetRecord]:
    """Sample, render, and (optionally) corrupt ``count`` records.

    ``corrupt`` is 'none' for clean records or 'conditional' for
    scene-correlated corruption.  Per-record seeds derive from
    (seed, id, stream) tuples so any record is reproducible in isolation.
    """
    if corrupt not in ("none", "conditional"):
        raise DataError(f"unknown corruption mode {corrupt!r}")
    records = []
    for i in range(count):
        scene = sample_scene((seed, i, 0), cfg.sim)
        features = render_features(scene, cfg.sim, (seed, i, 1))
        spec = DegradationSpec()
        if corrupt == "conditional":
            spec = sample_conditional_degradation(scene, np.random.default_rng((seed, i, 2)))
            features = apply_degradation(features, spec, (seed, i, 3))
        records.append(DatasetRecord(id=i, scene=scene, features=features,
                                     degradation=spec,
                                     routing_label=features.routing_label()))
    return records


def _feature_block(fs: ModalityFeatureSet) -> bytes:
    fused = np.ascontiguousarray(fs.fused_tokens.astype(FEATURE_DTYPE))
    return fused.tobytes()


def write_dataset(records: list[DatasetRecord], out_dir: str | Path,
                  cfg: PipelineConfig, seed: int) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    geom = cfg.geometry
    n_tokens, d = geom.n_tokens, geom.feat_dim

    header_lines = []
    blob_parts = []
    offset = 0
    for rec in records:
        block = _feature_block(rec.features)
        header = {
            "id": rec.id,
            "scene": rec.scene.to_dict(),
            "degradation": rec.degradation.to_dict(),
            "routing_label": list(rec.routing_label),
            "lidar_present": rec.features.lidar_present,
            "camera_present": rec.features.camera_present,
            "offset": offset,
            "nbytes": len(block),
        }
        header_lines.append(json.dumps(header, sort_keys=True, separators=(",", ":")))
        blob_parts.append(block)
        offset += len(block)

    records_bytes = ("\n".join(header_lines) + "\n").encode("utf-8")
    features_bytes = b"".join(blob_parts)
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "count": len(records),
        "seed": int(seed),
        "config": resolve_config(cfg),
        "config_hash": config_hash(cfg),
        "sim_hash": sim_hash(cfg),
        "feature_dtype": "float32",
        "feature_shape": [n_tokens, d],
        "records_sha256": hashlib.sha256(records_bytes).hexdigest(),
        "features_sha256": hashlib.sha256(features_bytes).hexdigest(),
    }
    (out_dir / "records.jsonl").write_bytes(records_bytes)
    (out_dir / "features.bin").write_bytes(features_bytes)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return out_dir


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable dataset manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise DataError(f"{manifest_path} is not a {FORMAT_TAG} manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise DataError(f"dataset version {manifest.get('version')} unsupported "
                        f"(want {FORMAT_VERSION})")
    return manifest


def read_dataset(path: str | Path, verify: bool = True) -> tuple[dict, list[DatasetRecord]]:
    """Load (manifest, records); checksums verified unless ``verify=False``."""
    path = Path(path)
    manifest = read_manifest(path)
    records_bytes = (path / "records.jsonl").read_bytes()
    features_bytes = (path / "features.bin").read_bytes()
    if verify:
        if hashlib.sha256(records_bytes).hexdigest() != manifest["records_sha256"]:
            raise DataError(f"records checksum mismatch in {path}")
        if hashlib.sha256(features_bytes).hexdigest() != manifest["features_sha256"]:
            raise DataError(f"features checksum mismatch in {path}")

    n_tokens, d = manifest["feature_shape"]
    n_bev = _n_bev_tokens(manifest)
    bev_shape, cam_shape = _grid_shapes(manifest)
    records = []
    for line in records_bytes.decode("utf-8").splitlines():
        header = json.loads(line)
        start, nbytes = header["offset"], header["nbytes"]
        if start + nbytes > len(features_bytes):
            raise DataError(f"feature sidecar truncated for record {header['id']}")
        fused = np.frombuffer(features_bytes[start:start + nbytes],
                              dtype=FEATURE_DTYPE).reshape(n_tokens, d)
        fs = ModalityFeatureSet(
            lidar_bev=fused[:n_bev].reshape(*bev_shape, d),
            camera=fused[n_bev:].reshape(*cam_shape, d),
            lidar_present=header["lidar_present"],
            camera_present=header["camera_present"])
        records.append(DatasetRecord(
            id=header["id"],
            scene=SceneState.from_dict(header["scene"]),
            features=fs,
            degradation=DegradationSpec.from_dict(header["degradation"]),
            routing_label=tuple(header["routing_label"])))
    if len(records) != manifest["count"]:
        raise DataError(f"record count {len(records)} != manifest count "
                        f"{manifest['count']} in {path}")
    return manifest, records


def _config_value(manifest: dict, key: str) -> int:
    for line in manifest["config"].splitlines():
        k, _, v = line.partition(" = ")
        if k == key:
            return int(v)
    raise DataError(f"dataset manifest config lacks {key!r}")


def _n_bev_tokens(manifest: dict) -> int:
    return _config_value(manifest, "geometry.bev_rows") * _config_value(
        manifest, "geometry.bev_cols")


def _grid_shapes(manifest: dict) -> tuple[tuple[int, int], tuple[int, int]]:
    return ((_config_value(manifest, "geometry.bev_rows"),
             _config_value(manifest, "geometry.bev_cols")),
            (_config_value(manifest, "geometry.cam_rows"),
             _config_value(manifest, "geometry.cam_cols")))


def dataset_checksums(path: str | Path) -> dict[str, str]:
    """sha256 of each dataset file (used by determinism and read-only checks)."""
    path = Path(path)
    return {name: hashlib.sha256((path / name).read_bytes()).hexdigest()
            for name in ("manifest.json", "records.jsonl", "features.bin")}
