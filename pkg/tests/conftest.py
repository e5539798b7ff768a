import numpy as np
import pytest

from pcsindy import scenarios
from pcsindy.simulator import simulate


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def system():
    return scenarios.default_system()


@pytest.fixture(scope="session")
def id_traj(system):
    return simulate(scenarios.identification_scenario(), system)


@pytest.fixture(scope="session")
def val_traj(system):
    return simulate(scenarios.validation_scenario(), system)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def noisy_fit(master_seed, kind="analytical", name="identification"):
    """Identification exactly as the pipeline runs it, for one master seed."""
    from pcsindy.config import config_from_dict
    from pcsindy.pmu import build_matrices, sample
    from pcsindy.sindy import stlsq

    cfg = config_from_dict({"seed": master_seed, "scenario": {"name": name}})
    traj = simulate(cfg.build_scenario(), cfg.system)
    pmu_cfg = cfg.pmu_config()
    series = sample(traj, pmu_cfg).window(*cfg.scenario.identification_window)
    lib = cfg.library(kind, series.roster)
    return stlsq(build_matrices(series, lib, config=pmu_cfg), cfg.stlsq, lib), traj
