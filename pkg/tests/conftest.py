import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def gradient_image():
    """A 48x32 image with distinct values everywhere, for resize/crop checks."""
    h, w = 48, 32
    base = (np.arange(h * w * 3, dtype=np.int64) * 7919 % 256).astype(np.uint8)
    return base.reshape(h, w, 3)
