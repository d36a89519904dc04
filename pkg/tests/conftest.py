"""Shared fixtures."""

import numpy as np
import pytest

from app.config import config
from app.services.dgp import sample_params
from app.services.exactg import DiscreteMdp, parse_mdp

THREE_POINT_MDP = """
# two states, treatment pushes towards 'high' one step later
horizon 3
states low high
initial : 0.5 0.5
transition * 0 low : 0.8 0.2
transition * 0 high : 0.3 0.7
transition * 1 low : 0.2 0.8
transition * 1 high : 0.1 0.9
behavior * low : 0.5
behavior * high : 0.5
outcome 0 low : 0
outcome 1 low : 0
outcome 0 high : 1
outcome 1 high : 1
"""


@pytest.fixture
def small_params():
    """Shipped parameter draw on a 17-point grid."""
    return sample_params(config.DGP_SEED, t_star=17)


@pytest.fixture
def three_point_mdp() -> DiscreteMdp:
    return parse_mdp(THREE_POINT_MDP)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def three_point_text() -> str:
    return THREE_POINT_MDP
