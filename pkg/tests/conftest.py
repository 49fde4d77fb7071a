import numpy as np
import pytest

from m2h import autodiff as ad


@pytest.fixture
def f64():
    with ad.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
