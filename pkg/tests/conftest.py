import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rescurve.problems import NoiseSpec, add_noise, make_model_problem  # noqa: E402
from rescurve.solver import AlphaGrid, sweep  # noqa: E402


@pytest.fixture(scope="session")
def model22():
    return make_model_problem(2, 2)


@pytest.fixture(scope="session")
def noisy22(model22):
    return add_noise(model22, NoiseSpec(0.005, 42))


@pytest.fixture(scope="session")
def sweep_clean22(model22):
    return sweep(model22, AlphaGrid())


@pytest.fixture(scope="session")
def sweep_noisy22(noisy22):
    return sweep(noisy22, AlphaGrid())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
