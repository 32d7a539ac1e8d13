import numpy as np
import pytest
from fastapi.testclient import TestClient

from clipservice.app import create_app


@pytest.fixture(scope="session")
def tiny_client():
    """Service over the offline deterministic backbone."""
    return TestClient(create_app(model_spec="random-tiny"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def post_binary(client, route, body):
    return client.post(route, content=body,
                       headers={"Content-Type": "application/octet-stream"})
