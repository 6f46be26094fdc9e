import numpy as np
import pytest

from roughgibbs.brownian import PathLawSpec, sample_batch
from roughgibbs.rough import GridPath


def bm_path(seed=0, level=8, dim=2, interval=(0.0, 1.0)):
    vals = sample_batch(PathLawSpec("bm", interval, level, dim), 1, seed)[0]
    return GridPath(interval, level, vals)


def ou_path(seed=0, level=8, dim=1, interval=(-2.0, 2.0)):
    vals = sample_batch(PathLawSpec("ou", interval, level, dim), 1, seed)[0]
    return GridPath(interval, level, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
