import numpy as np
import pytest

from mentor import autodiff as ad


@pytest.fixture
def f64():
    """Run a test at 64-bit precision, restoring the previous width after."""
    prev = ad.get_precision()
    ad.set_precision("f64")
    yield
    ad.set_precision(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
