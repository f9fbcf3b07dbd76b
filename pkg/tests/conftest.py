import sys

import numpy as np
import pytest

from ictmbo.ict import IctConfig
from ictmbo.tasks import get_task, make_offline_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def bowl():
    return get_task("quadratic-bowl-8d")


@pytest.fixture(scope="session")
def seq():
    return get_task("seq-lookup-8x4")


@pytest.fixture(scope="session")
def bowl_data(bowl):
    return make_offline_dataset(bowl, 200, 0.2, seed=0)


@pytest.fixture
def tiny_cfg():
    return IctConfig(T=3, M=16, K=8, n_starts=2, hidden=8, epochs=5, meta_batch=32, seed=3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
