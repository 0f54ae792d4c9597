import numpy as np
import pytest

from drlcontrol._alloc import tune_malloc

tune_malloc()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
