import math

import pytest

from esscher2.esscher_solver import EsscherClass
from esscher2.lattice import build
from esscher2.market_model import JumpLaw, MarketModel

S0 = 100.0
SIGMA = 0.2
GAMMA = 0.1
LAM = 1.0
HORIZON = 1.0

# b~ for b=0: sigma^2/2 + lam*(e^gamma - 1 - gamma)
B_TILDE_AT_B0 = 0.5 * SIGMA**2 + LAM * (math.expm1(GAMMA) - GAMMA)


@pytest.fixture(scope="session")
def baseline():
    """sigma=0.2, lam=1, gamma=0.1, b=0, r = b~ (so eta(0) = 0)."""
    return MarketModel.single(s0=S0, horizon=HORIZON, r=B_TILDE_AT_B0, b=0.0,
                              sigma=SIGMA, gamma=GAMMA, lam=LAM)


@pytest.fixture(scope="session")
def r0_model():
    """Same coefficients with zero rate (discount-free cases)."""
    return MarketModel.single(s0=S0, horizon=HORIZON, r=0.0, b=0.0,
                              sigma=SIGMA, gamma=GAMMA, lam=LAM)


@pytest.fixture(scope="session")
def multiseg_model():
    """Three segments; sigma and gamma uniform so the lattice still builds."""
    return MarketModel.from_segments(
        s0=S0, horizon=1.5,
        specs=[
            {"t0": 0.0, "r": 0.01, "b": 0.02, "sigma": SIGMA, "gamma": GAMMA, "lambda": 0.8},
            {"t0": 0.5, "r": 0.02, "b": -0.01, "sigma": SIGMA, "gamma": GAMMA, "lambda": 1.4},
            {"t0": 1.0, "r": 0.00, "b": 0.00, "sigma": SIGMA, "gamma": GAMMA, "lambda": 1.0},
        ])


@pytest.fixture(scope="session")
def lat120(baseline):
    return build(baseline, EsscherClass.LINEAR, 120)


@pytest.fixture(scope="session")
def lat120_exp(baseline):
    return build(baseline, EsscherClass.EXPONENTIAL, 120)


@pytest.fixture(scope="session")
def two_point_law():
    return JumpLaw.two_point(0.3)
