import sys
from pathlib import Path

import numpy as np
import pytest

from fictdisc.mdp import load_fixture

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def fix1():
    return load_fixture("fix1")


@pytest.fixture(scope="session")
def fix2():
    return load_fixture("fix2")


@pytest.fixture(scope="session")
def fix3():
    return load_fixture("fix3")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

