import numpy as np
import pytest

from psrlab import pomdp as pmd
from psrlab.pomdp import default_psr, random_revealing


@pytest.fixture(scope="session")
def reference_env():
    return random_revealing(seed=1, n_states=2, n_obs=3, n_actions=2, horizon=2)


@pytest.fixture(scope="session")
def reference_model(reference_env):
    model, _ = default_psr(reference_env)
    return model


@pytest.fixture(scope="session")
def reference_g(reference_env):
    return default_psr(reference_env)[1]


@pytest.fixture(scope="session")
def small_env():
    """2-obs / 2-action / 2-state documented seed instance."""
    return random_revealing(seed=7, n_states=2, n_obs=2, n_actions=2, horizon=3)


@pytest.fixture(scope="session")
def small_model(small_env):
    return default_psr(small_env)[0]


def make_single_state_env(horizon=2, n_obs=2, n_actions=2, emission_row=None):
    """One hidden state: trajectory probabilities factor over emissions."""
    space = pmd.ObsActSpace(n_obs, n_actions, horizon)
    if emission_row is None:
        emission_row = np.full(n_obs, 1.0 / n_obs)
    emission = np.stack([np.array([emission_row], dtype=float) for _ in range(horizon)])
    transition = np.ones((horizon - 1, n_actions, 1, 1))
    reward = pmd.RewardTable(np.zeros((horizon, n_obs, n_actions)))
    return pmd.TabularPomdp(1, space, transition, emission, 0, reward)
