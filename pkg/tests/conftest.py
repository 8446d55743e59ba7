import numpy as np
import pytest

from uapg.imaging import ImageTensor, Perturbation


@pytest.fixture
def rng():
    return np.random.default_rng(0xA11CE)


@pytest.fixture
def random_image(rng):
    """Interior-valued image: finite differences stay inside [0, 1]."""
    return ImageTensor(rng.uniform(0.1, 0.9, (16, 16, 3)))


@pytest.fixture
def random_perturbation(rng):
    # float32-exact values so UAPP round trips are bit-identical
    data = rng.uniform(-0.1, 0.1, (8, 8, 3)).astype(np.float32)
    return Perturbation(data.astype(np.float64), clip_bound=0.1)
