import numpy as np
import pytest

from statclim import presets
from statclim.params import Constants


@pytest.fixture(scope="session")
def consts():
    return Constants()


@pytest.fixture(scope="session")
def fitted_params():
    return presets.fitted_params()


@pytest.fixture(scope="session")
def hist_covariates():
    return presets.synthetic_covariates(1959, 2022)


@pytest.fixture(scope="session")
def spinup_1959(fitted_params, consts):
    return presets.spinup_state(fitted_params, consts)


@pytest.fixture(scope="session")
def synthetic_dataset(fitted_params, hist_covariates, spinup_1959, consts):
    """One simulated 1959-2022 dataset at the benchmark parameters."""
    from statclim.simulate import simulate_dataset
    rng = np.random.Generator(np.random.Philox(key=[987654321, 1]))
    states, y = simulate_dataset(fitted_params, hist_covariates.e_total,
                                 hist_covariates.f_ex, spinup_1959, rng,
                                 consts)
    return states, y


def admissible_state(rng):
    """A random state inside the physical domain."""
    return np.array([
        rng.uniform(300.0, 1500.0), rng.uniform(-5.0, 5.0),
        rng.uniform(-5.0, 5.0), rng.uniform(-1.0, 5.0),
        rng.uniform(-1.0, 3.0), rng.uniform(-1.0, 3.0)])


def random_physical(rng):
    from statclim.params import PhysicalParams
    return PhysicalParams(
        b1=rng.uniform(0.005, 0.03), b2=rng.uniform(0.005, 0.03),
        c1=rng.uniform(0.0, 0.2), c2=rng.uniform(0.0, 0.2),
        f1=rng.uniform(3.0, 7.0), f2=rng.uniform(0.0, 4e-4),
        f3=rng.uniform(0.0, 0.1), gamma=rng.uniform(0.5, 2.5),
        lam=rng.uniform(0.5, 2.5), h_m=rng.uniform(5.0, 15.0),
        h_d=rng.uniform(50.0, 300.0))
