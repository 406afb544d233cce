import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, m, rank=None):
    B = rng.normal(size=(m, rank or m))
    return B @ B.T + 1e-3 * np.eye(m)


@pytest.fixture(scope="session")
def small_data():
    from lkp import make_synthetic, split

    return split(make_synthetic(num_users=120, num_items=150, num_categories=6, seed=3), seed=3)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
