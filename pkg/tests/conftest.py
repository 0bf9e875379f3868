import numpy as np
import pytest

from crossrec import data, training


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small two-domain synthetic set with ground truth, shared across tests."""
    config = data.SyntheticConfig(
        users_per_domain=30, overlap=16, items_per_domain=24,
        d_shared=3, d_variant=1, shared_weight=1.5, bias=1.0)
    sx, sy, truth = data.generate_synthetic(config, seed=5)
    return {"x": sx, "y": sy}, truth


@pytest.fixture(scope="session")
def tiny_split(tiny_dataset):
    interactions, _ = tiny_dataset
    return data.split_overlapped(interactions["x"], interactions["y"],
                                 seed=3, negatives=8)


@pytest.fixture(scope="session")
def tiny_config():
    return training.TrainConfig(
        encoder_layers=3, shallow_layers=2, embed_dim=4, group_size=8,
        flow_layers=1, flow_hidden=8, learning_rate=5e-3, epochs=3,
        seed=1, direction="xy", patience=10)


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_dataset, tiny_split, tiny_config):
    interactions, _ = tiny_dataset
    checkpoint, logs = training.fit(tiny_config, interactions, tiny_split)
    return checkpoint, logs
