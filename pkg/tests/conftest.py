import numpy as np
import pytest

from heraldsim.config import RunConfig
from heraldsim.sequence import run_experiment

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20160401)


def simulate(conf: RunConfig):
    return run_experiment(conf.sequence, conf.source, conf.detector, conf.ion, conf.seed)


@pytest.fixture(scope="session")
def default_config():
    return RunConfig()


@pytest.fixture(scope="session")
def full_run(default_config):
    """The default 10 h run (seed from the default config)."""
    return simulate(default_config)


@pytest.fixture(scope="session")
def short_config():
    return RunConfig().replace(**{"sequence.run_duration": 600.0, "sequence.p_dark_extra": 0.0})


@pytest.fixture(scope="session")
def short_run(short_config):
    return simulate(short_config)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
