import os
import warnings

import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

from hartreelab.grid import RadialGrid  # noqa: E402
from hartreelab.groundstate import compute_Q  # noqa: E402
from hartreelab.potentials import make_potential  # noqa: E402


@pytest.fixture(scope="session")
def gs():
    """Ground state on the default radial mesh (m = 8192, R = 40)."""
    return compute_Q(RadialGrid(8192, 40.0))


@pytest.fixture(scope="session")
def n_star(gs):
    return gs.n_star


@pytest.fixture(scope="session")
def sat2():
    return make_potential("saturating", 2)


@pytest.fixture
def tmpdir_path(tmp_path):
    return os.fspath(tmp_path)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
