import numpy as np
import pytest

from kinklab.potential import cached_profile, phi4, sine_gordon


@pytest.fixture(scope="session")
def p4():
    return cached_profile(phi4())


@pytest.fixture(scope="session")
def sg():
    return cached_profile(sine_gordon())


@pytest.fixture(scope="session", params=["phi4", "sine-gordon"])
def profile(request, p4, sg):
    return p4 if request.param == "phi4" else sg


def sg_closed_form(x):
    return 4.0 / np.pi * np.arctan(np.exp(x)) - 1.0


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """List collecting one result line per acceptance criterion."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
