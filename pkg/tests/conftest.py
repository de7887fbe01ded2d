import numpy as np
import pytest

from salbc.config import parse_config
from salbc.experiment import build_setup, run_experiment


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def reference_cfg():
    """The reference instance: all defaults of the experiment config."""
    return parse_config({})


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory, reference_cfg):
    out = tmp_path_factory.mktemp("reference")
    status = run_experiment(reference_cfg, out)
    return status, out


@pytest.fixture(scope="session")
def reference_setup(reference_cfg):
    return build_setup(reference_cfg)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_report(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def report(number, passed, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
