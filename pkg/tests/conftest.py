import json
import os

import numpy as np
import pytest

from sosupo.dynamics import make_system
from sosupo.localize import SamplerConfig, build_indicator_poly, harvest
from sosupo.sos import VAnsatz, solve_bound
from sosupo.upo import close_orbit, recurrence_guesses

DATA = os.path.join(os.path.dirname(__file__), "data")

# frozen oracle values (tests/oracles.py, DOP853 at rtol 1e-12)
VDP_PERIOD = 6.663286859323
VDP_CYCLE_X2 = 2.0593769948415583


@pytest.fixture(scope="session")
def vdp():
    return make_system("vanderpol", mu=1.0)


@pytest.fixture(scope="session")
def vdp_cert(vdp):
    return solve_bound(vdp.f, vdp.observable("x2"), VAnsatz(8, "invariant", vdp.symmetry_group))


@pytest.fixture(scope="session")
def vdp_P(vdp_cert):
    return build_indicator_poly(vdp_cert)


@pytest.fixture(scope="session")
def vdp_cloud(vdp_P, vdp_cert):
    eps = 10 * (vdp_cert.lam - VDP_CYCLE_X2)
    return harvest(vdp_P, SamplerConfig(((-3, 3), (-3, 3)), n_starts=50, rng_seed=0), eps)


@pytest.fixture(scope="session")
def vdp_orbit(vdp, vdp_cloud):
    guesses = recurrence_guesses(vdp, vdp_cloud, 30, 0.05, max_starts=5)
    return close_orbit(vdp, guesses[0])


@pytest.fixture(scope="session")
def moehlis_upo():
    with open(os.path.join(DATA, "moehlis9_re95_upo.json")) as fh:
        return json.load(fh)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
