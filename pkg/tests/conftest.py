import numpy as np
import pytest

from funmoe import (
    BasisConfig,
    ScenarioConfig,
    build_designs,
    simulate_dataset,
)


@pytest.fixture(scope="session")
def s1_small():
    """A moderately sized S1 dataset shared by fitter tests."""
    data = simulate_dataset(ScenarioConfig.preset("S1", n=600, seed=5))
    basis_r, basis_p, basis_q = BasisConfig(10, 8, 8).build()
    designs = build_designs(data.curves, basis_r, basis_p, basis_q)
    return data, designs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
