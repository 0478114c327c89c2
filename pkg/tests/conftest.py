import pytest
import torch

from dermkit.adapter import AdapterDims
from dermkit.backbone import ToyBackbone


@pytest.fixture
def small_dims() -> AdapterDims:
    return AdapterDims(
        patch_size=4, channels=1, d_c=16, d_b=4, n_blocks=2,
        d_s=16, d_t=8, rank=8, d_model=24,
    )


@pytest.fixture
def small_backbone(small_dims) -> ToyBackbone:
    return ToyBackbone(
        vocab_size=48, d_model=small_dims.d_model, d_hidden=32, max_len=64, seed=7,
    )


@pytest.fixture
def small_backbone64(small_dims) -> ToyBackbone:
    return ToyBackbone(
        vocab_size=48, d_model=small_dims.d_model, d_hidden=32, max_len=64, seed=7,
        dtype=torch.float64,
    )
