import os
import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

hypothesis.settings.register_profile("default", max_examples=30, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from tilesal.network import DualModel, NetworkWeights, init_weights, reduced_spec  # noqa: E402
from tilesal.train import TrainSample  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def as_f64(net: NetworkWeights) -> NetworkWeights:
    return NetworkWeights(net.spec, {k: v.astype(np.float64) for k, v in net.tensors.items()})


@pytest.fixture
def reduced_model_f64():
    spec = reduced_spec()
    return DualModel(as_f64(init_weights(spec, 11)), as_f64(init_weights(spec, 12)))


def toy_dataset(seed: int = 0, n: int = 8) -> list[TrainSample]:
    """Synthetic 8x8 region pairs whose label is a smoothed copy of the fine region's red channel."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        fine = rng.random((1, 3, 8, 8)).astype(np.float32)
        coarse = rng.random((1, 3, 8, 8)).astype(np.float32)
        label = 0.8 * fine[:, :1].reshape(1, 1, 4, 2, 4, 2).mean(axis=(3, 5))
        out.append(TrainSample(fine, coarse, label.astype(np.float32)))
    return out


@pytest.fixture
def toy_data():
    return toy_dataset()
