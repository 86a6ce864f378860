import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, shape) -> np.ndarray:
    return rng.random(shape, dtype=np.float32)
