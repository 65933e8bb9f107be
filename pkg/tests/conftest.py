import warnings

import numpy as np
import pytest

from movingqvi.sets import BiactiveWarning


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quiet_biactive():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BiactiveWarning)
        yield


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q @ np.diag(np.linspace(1.0, cond, n)) @ q.T
