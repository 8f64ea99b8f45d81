import numpy as np
import pytest

from ltvlab import experiments
from ltvlab.config import default_config


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def pendulum_setup(cfg):
    return experiments.setup(cfg, "pendulum")


@pytest.fixture(scope="session")
def pendulum_solution(cfg, pendulum_setup):
    return experiments.solve_task(cfg, pendulum_setup, 0)


@pytest.fixture(scope="session")
def pendulum_nominal(pendulum_solution):
    return pendulum_solution.trajectory


@pytest.fixture(scope="session")
def cartpole_setup(cfg):
    return experiments.setup(cfg, "cartpole")


@pytest.fixture(scope="session")
def cartpole_solution(cfg, cartpole_setup):
    return experiments.solve_task(cfg, cartpole_setup, 0)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
