import time
from types import SimpleNamespace

import numpy as np
import pytest

from ssmrobust import (
    ModelConfig,
    SsmClassifier,
    TrainConfig,
    synthetic_splits,
    train,
)


def _train_toy(seed: int, epochs: int):
    splits = synthetic_splits(4, 200, 28, seed=seed)
    cfg = ModelConfig(num_classes=4)
    t0 = time.perf_counter()
    ckpt = train(cfg, TrainConfig(epochs=epochs, batch_size=50, seed=seed), splits[0], splits[1])
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(
        seed=seed,
        model=SsmClassifier(ckpt.model_cfg),
        ckpt=ckpt,
        params=ckpt.params,
        splits=splits,
        train_seconds=elapsed,
        epochs=epochs,
    )


@pytest.fixture(scope="session")
def toy_run():
    """The canonical trained toy model: 4 classes, 200/class, seed 7."""
    return _train_toy(7, epochs=5)


@pytest.fixture(scope="session")
def toy_runs(toy_run):
    """Trained toy models for seeds 7, 8, 9 (medians over seeds)."""
    return [toy_run, _train_toy(8, epochs=5), _train_toy(9, epochs=5)]


@pytest.fixture(scope="session")
def mini_run():
    """A deliberately tiny trained model for fast structural tests."""
    splits = synthetic_splits(3, 24, 8, seed=3)
    cfg = ModelConfig(num_classes=3, image_size=8, patch_size=4, embed_dim=8, state_dim=4)
    ckpt = train(cfg, TrainConfig(epochs=2, batch_size=12, seed=3), splits[0], splits[1])
    return SimpleNamespace(
        model=SsmClassifier(cfg), ckpt=ckpt, params=ckpt.params, splits=splits
    )


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=20240801))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICT_LINES
    except ImportError:
        return
    if VERDICT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in VERDICT_LINES:
            terminalreporter.write_line(line)
