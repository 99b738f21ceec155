import numpy as np
import pytest

from strbench.datasets import generate_synthetic
from strbench.problems import from_dataset, quadratic_problem


@pytest.fixture(scope="session")
def small_logistic():
    ds = generate_synthetic(60, 8, seed=11)
    return from_dataset(ds, "logistic_nc", reg_lambda=1e-3, reg_alpha=10.0)


@pytest.fixture(scope="session")
def small_nls():
    ds = generate_synthetic(60, 8, seed=12)
    return from_dataset(ds, "nls_nc", reg_lambda=1e-3, reg_alpha=10.0)


@pytest.fixture(scope="session")
def quad_problem():
    return quadratic_problem(12, 5, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
