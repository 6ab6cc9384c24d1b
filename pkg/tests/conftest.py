"""Shared fixtures.

Cheap fixtures (default config, a small record batch, an untrained model)
are session-scoped and read-only.  The expensive fixtures — the trained
phase-1 checkpoint and the phase-2 router models — are also session-scoped
but lazy, so unit-test runs that deselect the acceptance tests never pay
for training.  Tests that mutate a model must build their own.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from terrapilot.config import PipelineConfig, replace
from terrapilot.model.core import TerraModel
from terrapilot.sim.dataset import generate_records
from terrapilot.training import train_phase1, train_phase2

# Acceptance-scale knobs, shared between fixtures and the acceptance tests.
CAPTION_TRAIN = (4000, 42)   # (count, generation seed) for phase-1 training
CAPTION_HELD = (400, 43)
ROUTER_TRAIN = (2000, 44)
ROUTER_HELD = (300, 45)
PHASE1_EPOCHS = 5
PHASE2_EPOCHS = 6
PHASE2_LR = 3e-3
MODEL_SEED = 1
TRAIN_SEED = 7
ROUTER_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def cfg() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture(scope="session")
def tiny_records(cfg):
    """Two dozen clean records for cheap forward-pass tests (read-only)."""
    return generate_records(24, seed=9, cfg=cfg)


@pytest.fixture(scope="session")
def tiny_model(cfg):
    """Untrained default model (read-only: never train or mutate this)."""
    return TerraModel(cfg, seed=3)


@pytest.fixture
def announce(capsys):
    """Print a line straight to the terminal, bypassing pytest capture."""
    def _announce(line: str) -> None:
        with capsys.disabled():
            print(line, flush=True)
    return _announce


# -- acceptance-scale fixtures -------------------------------------------------


@pytest.fixture(scope="session")
def caption_train_records(cfg):
    count, seed = CAPTION_TRAIN
    return generate_records(count, seed=seed, cfg=cfg)


@pytest.fixture(scope="session")
def caption_held_records(cfg):
    count, seed = CAPTION_HELD
    return generate_records(count, seed=seed, cfg=cfg)


@pytest.fixture(scope="session")
def router_train_records(cfg):
    count, seed = ROUTER_TRAIN
    return generate_records(count, seed=seed, cfg=cfg)


@pytest.fixture(scope="session")
def router_held_records(cfg):
    count, seed = ROUTER_HELD
    return generate_records(count, seed=seed, cfg=cfg)


def phase1_config(cfg: PipelineConfig) -> PipelineConfig:
    return replace(cfg, train=replace(cfg.train, epochs=PHASE1_EPOCHS,
                                      seed=TRAIN_SEED))


@pytest.fixture(scope="session")
def phase1_run(tmp_path_factory, cfg, caption_train_records):
    """Train the full model once; returns (checkpoint path, wall seconds).

    Consumers load fresh copies from the checkpoint so that router-only
    phase-2 runs in one test cannot leak state into another.
    """
    train_cfg = phase1_config(cfg)
    model = TerraModel(train_cfg, seed=MODEL_SEED)
    t0 = time.perf_counter()
    train_phase1(model, caption_train_records)
    seconds = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("checkpoints") / "phase1.npz"
    model.save(path, phase=1)
    return path, seconds


@pytest.fixture(scope="session")
def phase1_model(phase1_run):
    """Fresh phase-1 model loaded from the shared checkpoint (read-only)."""
    model, _meta = TerraModel.load(phase1_run[0])
    return model


def train_router(checkpoint_path, records, seed: int) -> tuple[TerraModel, float]:
    """Load a fresh phase-1 copy and train its router; returns (model, secs)."""
    model, _meta = TerraModel.load(checkpoint_path)
    cfg2 = replace(model.cfg, train=replace(model.cfg.train, phase=2,
                                            epochs=PHASE2_EPOCHS, lr=PHASE2_LR,
                                            seed=seed))
    model = TerraModel(cfg2, seed=model.seed, store=model.store)
    t0 = time.perf_counter()
    train_phase2(model, records)
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def phase2_runs(phase1_run, router_train_records):
    """Router training at three seeds: {seed: (model, wall seconds)}."""
    checkpoint_path, _ = phase1_run
    return {seed: train_router(checkpoint_path, router_train_records, seed)
            for seed in ROUTER_SEEDS}
