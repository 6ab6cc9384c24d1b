"""Synthetic world: scene sampling, feature rendering, corruption, datasets."""

from .dataset import (DatasetRecord, dataset_checksums, generate_records,
                      read_dataset, read_manifest, write_dataset)
from .degrade import DegradationSpec, apply_degradation, sample_conditional_degradation
from .render import (BEV_ATTR_DIM, CAM_ATTR_DIM, FeatureEmbedder, ModalityFeatureSet,
                     get_embedder, render_features, scene_bev_attrs, scene_cam_attrs)
from .scene import (HORIZON_INDICES, N_TRAJ_POINTS, TRAJ_DT, Obstacle, SceneState,
                    derive_action, horizon_points, sample_scene, synth_trajectory)

__all__ = [
    "SceneState", "Obstacle", "sample_scene", "derive_action", "synth_trajectory",
    "horizon_points", "HORIZON_INDICES", "N_TRAJ_POINTS", "TRAJ_DT",
    "ModalityFeatureSet", "FeatureEmbedder", "get_embedder", "render_features",
    "scene_bev_attrs", "scene_cam_attrs", "BEV_ATTR_DIM", "CAM_ATTR_DIM",
    "DegradationSpec", "apply_degradation", "sample_conditional_degradation",
    "DatasetRecord", "generate_records", "write_dataset", "read_dataset",
    "read_manifest", "dataset_checksums",
]
