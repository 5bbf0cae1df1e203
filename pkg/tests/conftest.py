import numpy as np
import pytest

from pipbc import instances

np.seterr(all="raise", under="ignore")


@pytest.fixture(scope="session")
def tp1():
    return instances.tp1()


@pytest.fixture(scope="session")
def tp2():
    return instances.tp2()


@pytest.fixture(scope="session")
def ph1():
    return instances.ph1()
