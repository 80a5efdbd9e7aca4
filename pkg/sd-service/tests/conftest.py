import numpy as np
import pytest
from fastapi.testclient import TestClient

from sdservice import create_app


@pytest.fixture()
def app():
    return create_app(seed=7)


@pytest.fixture()
def client(app):
    return TestClient(app)


@pytest.fixture()
def latent16():
    rng = np.random.default_rng(21)
    return rng.standard_normal((16, 16, 4))
