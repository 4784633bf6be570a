import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import easy_task_kwargs, make_split_pair, small_dims  # noqa: E402

from drex.model import FusionConfig  # noqa: E402
from drex.training import TrainConfig, train  # noqa: E402


def small_model_config(**overrides) -> FusionConfig:
    base = dict(
        dino_dim=24,
        resnet_dim=40,
        proj_dim=16,
        attn_hidden=8,
        head_dims=(12, 8),
        dropout_p=0.1,
        seed=0,
    )
    base.update(overrides)
    return FusionConfig(**base)


def small_train_config(**overrides) -> TrainConfig:
    # ema_decay matched to the short step count: 0.999 would leave the
    # shadow mostly at initialization after a few hundred steps
    base = dict(epochs=12, seed=7, ema_decay=0.9, max_lr=3e-3)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def small_sets():
    """600/200 split of the compact synthetic task (both branches informative)."""
    return make_split_pair(
        600, 200, seed=101, informative="both", **easy_task_kwargs(), **small_dims()
    )


@pytest.fixture(scope="session")
def small_checkpoint(small_sets):
    """A trained desk-scale checkpoint shared by the analysis tests."""
    train_set, test_set = small_sets
    checkpoint, report = train(
        small_model_config(seed=7), small_train_config(), train_set, test_set
    )
    return checkpoint, report, train_set, test_set


def assert_allclose(a, b, **kw):
    np.testing.assert_allclose(a, b, **kw)
