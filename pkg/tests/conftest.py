import numpy as np
import pytest

from src.config.index import appConfig
from src.config.logging import configure_logging
from src.models.index import SystemConfig

configure_logging(log_filename=None)


def pytest_collection_modifyitems(config, items):
    if appConfig["run_acceptance"]:
        return
    skip = pytest.mark.skip(reason="set SYNCLAB_RUN_ACCEPTANCE=1 to run")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def reference_config():
    return SystemConfig(N=128, N_g=32)


@pytest.fixture
def toy_config():
    return SystemConfig(N=16, N_g=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
