import numpy as np
import pytest

from coherentq.coherent import Fiducial
from coherentq.hilbert import SpaceConfig


@pytest.fixture(scope="session")
def cfg64():
    return SpaceConfig(64, 1.0, 1.0)


@pytest.fixture(scope="session")
def ground64(cfg64):
    return Fiducial.ground(cfg64)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)
