import numpy as np
import pytest

from aerobat.config import load_config


@pytest.fixture(scope="session")
def params():
    return load_config()


@pytest.fixture(scope="session")
def quiet_params():
    """Aero, damping and guides off: a conservative massed system."""
    return load_config(None, {"aero.enabled": "false", "massed.shoulder_damping": "0",
                              "massed.elbow_damping": "0", "massed.guide_damping": "0",
                              "massed.guide_stiffness": "0"})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """``report(n, passed, detail)`` records one acceptance criterion outcome."""
    def report(n, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}"
        _ACCEPTANCE.append((n, line))
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
