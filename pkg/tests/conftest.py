import numpy as np
import pytest

from omnisal.fixtures import PIPELINE_FIXTURE, SMOOTH_FIXTURE, load_bundled
from omnisal.pipeline import make_pipeline_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def smooth_ep():
    return load_bundled(SMOOTH_FIXTURE)


@pytest.fixture(scope="session")
def pipeline_ep():
    return load_bundled(PIPELINE_FIXTURE)


@pytest.fixture(scope="session")
def pipeline_params():
    return make_pipeline_params()


def rand_tensor(rng, *shape):
    return rng.normal(size=shape).astype(np.float32)
