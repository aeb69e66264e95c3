import numpy as np
import pytest

from dsic.config import RunConfig
from dsic.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def leaf(rng):
    """Factory for random leaf tensors that require gradients."""

    def make(*shape, scale=1.0):
        return Tensor(scale * rng.normal(size=shape), requires_grad=True)

    return make


@pytest.fixture
def tiny_cfg(tmp_path):
    """A configuration small enough to train in well under a second per step."""
    return RunConfig(
        image_size=32,
        channels=(4, 6, 6, 8),
        blocks=(2, 2, 2, 2),
        d=6,
        steps=4,
        batch_size=2,
        n_val=4,
        log_every=2,
        gate_every=2,
        seeds=(1, 2),
        out_dir=str(tmp_path / "run"),
    )
