import numpy as np
import pytest

from fuseseg.config import NetworkConfig
from fuseseg.phantom import PhantomConfig, synth_case


@pytest.fixture
def tiny_cfg() -> NetworkConfig:
    """Smallest config that still exercises every submodule."""
    return NetworkConfig(modalities=2, classes=2, stages=2, base_channels=2,
                         appearance_dim=4, patch=8)


def make_case(seed: int, edge: int = 32, modalities: int = 4, classes: int = 4):
    if modalities == 4 and classes == 4:
        cfg = PhantomConfig(extents=(edge, edge, edge))
    else:
        rng = np.random.default_rng(9)
        table = rng.uniform(0.1, 1.0, (modalities, classes + 1))
        cfg = PhantomConfig(extents=(edge, edge, edge), modalities=modalities,
                            classes=classes, intensity=table)
    return synth_case(cfg, seed)
