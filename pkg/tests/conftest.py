import numpy as np
import pytest

from visfuse.config import ExperimentConfig
from visfuse.harness.dataset import generate_dataset


def tiny_config(**kw) -> ExperimentConfig:
    """Small but structurally complete configuration for fast tests."""
    base = dict(grid_size=32, n_train=8, n_val=2, n_test=3, n_hour_angles=6, d_model=16,
                n_query=4, n_heads=2, vqg_layers=1, vis_freqs=2, field_width=16,
                field_freqs=4, text_tokens=32, epochs=1, clean_max_iter=50)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_ds(tiny_cfg):
    return generate_dataset(tiny_cfg)
