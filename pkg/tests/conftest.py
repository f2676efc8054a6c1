import numpy as np
import pytest

from fedcspack.config import DatasetSpec, RunConfig
from fedcspack.model import ShapeSpec
from fedcspack.partition import PartitionSpec


def small_config(**overrides):
    """Fast desk-scale run: 6 classes, tiny MLP, 8 clients."""
    defaults = dict(
        method="fedcspack",
        rounds=5,
        clients=8,
        cpr=0.5,
        local_epochs=1,
        lr=0.1,
        batch_size=16,
        pack=64,
        seed=1,
        partition=PartitionSpec(law="dirichlet", num_clients=8, seed=2, alpha=0.5),
        model=ShapeSpec.from_widths([16, 24, 6]),
        dataset=DatasetSpec(
            kind="blobs", num_classes=6, dim=16, samples_per_class=60, spread=0.3, seed=3
        ),
        cap_ratio=0.5,
    )
    defaults.update(overrides)
    if "clients" in overrides and "partition" not in overrides:
        defaults["partition"] = PartitionSpec(
            law="dirichlet", num_clients=overrides["clients"], seed=2, alpha=0.5
        )
    return RunConfig(**defaults)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
