import numpy as np
import pytest

from caesim.dynamics import Channel
from caesim.harness import source_s1, source_s2, source_s3


@pytest.fixture
def s1():
    return source_s1()


@pytest.fixture
def s2():
    return source_s2()


@pytest.fixture
def s3():
    return source_s3()


@pytest.fixture
def channel06():
    return Channel(0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# stationary law of the 4-state banded source, from the birth-death balance
# pi_1 * 0.2 = pi_2 * 0.1, pi_2 * 0.1 = pi_3 * 0.1, pi_3 * 0.1 = pi_4 * 0.2
S1_STATIONARY = np.array([1.0, 2.0, 2.0, 1.0]) / 6.0
