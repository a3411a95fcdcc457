import numpy as np
import pytest

from unrollrecon.phantom import build_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """24 slices at 64x64, C=4 (split 16/3/5)."""
    return build_dataset(24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
