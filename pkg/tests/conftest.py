import numpy as np
import pytest
import torch

from sleepssl.datastore import SynthConfig, generate_synthetic
from sleepssl.net import NetConfig


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def tiny_net_config():
    # shrunk architecture for fast unit tests (25.6 Hz epochs, 768 samples)
    return NetConfig(
        in_channels=2, samples_per_epoch=768,
        conv_widths=(4, 8, 8, 16), kernel_sizes=(7, 7, 5, 5), pool=2,
        seq_width=8, window=10, proj_dim=16,
        transformer_layers=2, transformer_heads=2,
    )


@pytest.fixture
def ds_net_config():
    # shrunk architecture sized for full 30 s epochs at 128 Hz (3840 samples)
    return NetConfig(
        in_channels=2, samples_per_epoch=3840,
        conv_widths=(4, 8, 8, 16), kernel_sizes=(7, 7, 5, 5), pool=4,
        seq_width=8, window=10, proj_dim=16,
        transformer_layers=2, transformer_heads=2,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """12 short labeled recordings at 128 Hz (no preprocessing needed)."""
    root = tmp_path_factory.mktemp("tiny_ds")
    config = SynthConfig(n_recordings=12, epochs_per_recording=24, rate_hz=128.0, seed=7)
    return generate_synthetic(config, root, dataset_id="tiny")


def rand_epochs(n, c=2, t=768, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, c, t))
