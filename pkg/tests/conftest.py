import numpy as np
import pytest

from pcrm import CovariateSpec, DesignConfig

# calibrated defaults: target 0.25, six doses, anchor 2, half-width 0.08
FROZEN_SKELETON = (
    0.11220248105521372,
    0.25,
    0.4220512286717278,
    0.5792831315488415,
    0.6969194634216832,
    0.7768462282754252,
)
FROZEN_LABELS = (
    -5.068438592149839,
    -4.09861228866811,
    -3.31435853219954,
    -2.6801687269457677,
    -2.1673287108534307,
    -1.7526186667518118,
)


@pytest.fixture
def default_config():
    return DesignConfig(doses=6, covariates=CovariateSpec.of(3), n_max=45)


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
