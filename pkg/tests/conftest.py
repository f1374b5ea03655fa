"""Shared fixtures: the default 53-floor damaged-building scenario."""

import numpy as np
import pytest

from modegp import RunConfig, datasets_from_measurements, make_bank, simulate


@pytest.fixture(scope="session")
def paper_config():
    return RunConfig()


@pytest.fixture(scope="session")
def paper_scenario(paper_config):
    """(model, truth, measurements) for the default config (seed 42)."""
    return simulate(paper_config)


@pytest.fixture(scope="session")
def paper_datasets(paper_scenario):
    _, _, measurements = paper_scenario
    return datasets_from_measurements(measurements)


@pytest.fixture(scope="session")
def paper_bank(paper_config, paper_scenario):
    model, _, measurements = paper_scenario
    return make_bank(paper_config, measurements, model.mass_matrix())


@pytest.fixture(scope="session")
def mass_matrix(paper_scenario):
    model, _, _ = paper_scenario
    return model.mass_matrix()


def random_spd(rng, n):
    """Random symmetric positive definite matrix, comfortably conditioned."""
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)
