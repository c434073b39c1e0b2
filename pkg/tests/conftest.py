import numpy as np
import pytest

from hitskel import ExitLaw


@pytest.fixture(scope="session")
def law():
    """One shared exit law; construction is cheap but reuse keeps intent clear."""
    return ExitLaw()


@pytest.fixture()
def rng():
    """Fresh, fixed-seed generator per test."""
    return np.random.default_rng(20260825)
