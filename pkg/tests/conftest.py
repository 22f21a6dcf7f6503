import numpy as np
import pytest

from invstab import zoo
from invstab.pipeline import prepare


@pytest.fixture(scope="session")
def doubling():
    return zoo.zoo_doubling()


@pytest.fixture(scope="session")
def quadratic():
    return zoo.zoo_quadratic(0.0)


@pytest.fixture(scope="session")
def product_squares():
    return zoo.zoo_product_squares()


@pytest.fixture(scope="session")
def cat_map():
    return zoo.zoo_torus_linear(np.array([[2, 1], [1, 1]]))


@pytest.fixture(scope="session")
def doubling_prep(doubling):
    return prepare(doubling, 1e-2, n_orbits=24, seed=0)


@pytest.fixture(scope="session")
def quadratic_prep(quadratic):
    return prepare(quadratic, 1e-2, n_orbits=32, seed=0, truncation_tol=1e-8)


@pytest.fixture(scope="session")
def product_prep(product_squares):
    return prepare(product_squares, 1e-2, n_orbits=24, seed=0,
                   truncation_tol=1e-8)
