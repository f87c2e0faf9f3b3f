import numpy as np
import pytest

from cfdistill import DEFAULT_IDM_PARAMS, IdmModel, generate_scenarios
from cfdistill.teacher import SyntheticOracle, label_scenarios


@pytest.fixture(scope="session")
def idm_model():
    return IdmModel(DEFAULT_IDM_PARAMS)


@pytest.fixture(scope="session")
def sample_states():
    """1000 states drawn from the training distribution, fixed seed."""
    return generate_scenarios(count=1000, seed=5).states


@pytest.fixture(scope="session")
def labeled_small():
    """400 scenarios labeled by the noiseless oracle, three votes each."""
    scen = generate_scenarios(count=400, seed=7)
    return label_scenarios(scen.states, SyntheticOracle(), k=3)
