import numpy as np
import pytest

from mxlab.config import ChannelModelConfig, SystemConfig


def _tiny():
    return SystemConfig(n_tx=4, n_rx=2, n_rf=2, n_rb=2, n_sc=24, n_subframes=3)


@pytest.fixture
def tiny_cfg():
    """4x2 MIMO, 2 RBs, mu=3, 3 sub-frames."""
    return _tiny()


@pytest.fixture(scope="module")
def tiny_cfg_module():
    return _tiny()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def single_ray():
    return ChannelModelConfig(n_clusters=1, rays_per_cluster=1, delay_spread_s=0.0)


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE: dict = {}


@pytest.fixture
def record_criterion():
    """``record_criterion(n, ok, detail)`` prints a line and keeps it for the summary."""
    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
