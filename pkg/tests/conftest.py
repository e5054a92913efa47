import numpy as np
import pytest
from hypothesis import settings

from pcg_mtl.dataset import synth_dataset, write_dataset

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def synth8():
    return synth_dataset(8, seed=1)


@pytest.fixture(scope="session")
def synth8_dir(tmp_path_factory, synth8):
    d = tmp_path_factory.mktemp("synth8")
    write_dataset(synth8, d)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
