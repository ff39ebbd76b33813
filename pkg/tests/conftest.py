import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from medshift.law import build_sim_dgp, true_nuisances

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sim_law():
    return build_sim_dgp()


@pytest.fixture(scope="session")
def sim_law4():
    return build_sim_dgp(a_levels=4)


@pytest.fixture(scope="session")
def sim_eta(sim_law):
    return true_nuisances(sim_law)


def random_law(rng, w_levels=((0, 1), (0, 1, 2)), a_levels=(0, 1, 2), z_levels=(0, 1, 2), conc=1.0):
    """A full-support law drawn from a flat Dirichlet."""
    from medshift.law import DiscreteLaw, StateSpace
    space = StateSpace(w_levels=w_levels, a_levels=a_levels, z_levels=z_levels)
    p = rng.dirichlet(np.full(space.n_states, conc)).reshape(space.shape)
    return DiscreteLaw(space, p / p.sum())


# acceptance report -------------------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Call with (criterion, passed, detail) to add a line to the acceptance summary."""
    log = request.config.stash[_ACCEPTANCE_KEY]

    def record(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        log.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
