import numpy as np
import pytest

from dpnet import DpnetConfig


@pytest.fixture
def toy_config() -> DpnetConfig:
    """Small but structurally complete configuration for fast tests."""
    cfg = DpnetConfig(
        input_size=64,
        stem_channels=(8, 16),
        shared_width=32,
        shared_blocks=2,
        hrp_blocks=2,
        lrp_stage1_width=64,
        lrp_stage1_blocks=2,
        lrp_stage2_width=128,
        lrp_stage2_blocks=2,
        fpn_channels=32,
        reduction=8,
        head_width=32,
        head_blocks=2,
        num_classes=4,
    )
    cfg.validate()
    return cfg


def zero_params(bundle, keep_gamma: bool = True) -> None:
    """Zero every tensor in a parameter bundle (normalization gains kept)."""
    for name, t in bundle.named_tensors("z"):
        if keep_gamma and name.endswith("gamma"):
            continue
        t.data[...] = 0.0
