"""Model package: routing bridge, structured heads, planner, full pipeline."""

from .bridge import (BRANCHES, BridgeOutputs, aggregate_compress, bridge_forward,
                     build_local_mask, build_query_masks, embed_queries,
                     expert_apply, expert_decode, init_bridge_params,
                     reference_points, route)
from .heads import (CaptionText, ObstacleSlot, StructuredAnswerSet,
                    decode_structured, field_targets, head_logits,
                    init_head_params, render_caption, vocab_name_of)
from .planner import (N_WAYPOINTS, gru_decode, init_planner_params,
                      make_planning_token)
from .core import (GRADIENT_DEAD_PARAMS, ModelOutputs, TerraModel,
                   phase1_trainable, phase2_trainable)

__all__ = [
    "BRANCHES", "BridgeOutputs", "aggregate_compress", "bridge_forward",
    "build_local_mask", "build_query_masks", "embed_queries", "expert_apply",
    "expert_decode", "init_bridge_params", "reference_points", "route",
    "CaptionText", "ObstacleSlot", "StructuredAnswerSet", "decode_structured",
    "field_targets", "head_logits", "init_head_params", "render_caption",
    "vocab_name_of", "N_WAYPOINTS", "gru_decode", "init_planner_params",
    "make_planning_token", "GRADIENT_DEAD_PARAMS", "ModelOutputs", "TerraModel",
    "phase1_trainable", "phase2_trainable",
]
