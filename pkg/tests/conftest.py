import numpy as np
import pytest

from mobnet import network_params, validate_generator


@pytest.fixture(scope="session")
def symmetric_2():
    return validate_generator([[-1.0, 1.0], [1.0, -1.0]])


@pytest.fixture(scope="session")
def asymmetric_2():
    return validate_generator([[-1.0, 1.0], [2.0, -2.0]])


@pytest.fixture(scope="session")
def ring_3():
    Q = np.array(
        [
            [-1.5, 1.0, 0.5],
            [0.3, -0.8, 0.5],
            [0.7, 0.9, -1.6],
        ]
    )
    return validate_generator(Q)


@pytest.fixture(scope="session")
def light_params(symmetric_2):
    # rho = 5/6, comfortably stable
    return network_params(symmetric_2, [0.5, 0.5], [0.6, 0.6])
