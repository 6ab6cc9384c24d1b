"""terrapilot: a desk-scale off-road perception-to-planning stack.

Synthetic scenes are rendered into camera-grid and LiDAR-BEV token maps,
a modality-routing query bridge compresses them into per-task tokens, and
closed-vocabulary caption heads plus a GRU trajectory decoder produce the
outputs.  Training is two-phase (task heads first, then the router under
modality dropout); evaluation covers BLEU, field accuracy, FDE/minADE,
and corruption sweeps.  Everything is deterministic given (config, seed).
"""

__version__ = "0.1.0"
