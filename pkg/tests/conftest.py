import numpy as np
import pytest

from statprec.channels import ArrayGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ula8():
    return ArrayGeometry.ula(8)


@pytest.fixture
def ura12():
    return ArrayGeometry.ura(3, 4)


def random_channels(rng, j, n):
    return (rng.standard_normal((j, n))
            + 1j * rng.standard_normal((j, n))) / np.sqrt(2.0)
