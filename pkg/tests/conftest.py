import pytest
import torch

from cfbt.config import SynthConfig, desk_config
from cfbt.synth import generate_dataset
from cfbt.verify import tiny_config


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def desk_cfg():
    return desk_config()


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate_dataset(SynthConfig(num_frames=24, seed=0), root, 2)
    return root


@pytest.fixture(scope="session")
def synth_sequences(synth_root):
    from cfbt.data import load_dataset

    report = load_dataset(synth_root)
    assert not report.skipped
    return report.sequences
