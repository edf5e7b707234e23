import numpy as np
import pytest

from nldrsmooth.manifolds import ManifoldSpec, lattice_cloud, sample_manifold


@pytest.fixture(scope="session")
def segment_cloud():
    return sample_manifold(ManifoldSpec("segment"), 1000, 0)


@pytest.fixture(scope="session")
def rect_small():
    return sample_manifold(ManifoldSpec("rectangle"), 50, 3)


@pytest.fixture(scope="session")
def rect_cloud():
    return sample_manifold(ManifoldSpec("rectangle"), 4000, 0)


@pytest.fixture(scope="session")
def rect_lattice():
    return lattice_cloud(ManifoldSpec("rectangle"), 41)


@pytest.fixture(scope="session")
def swiss_cloud():
    return sample_manifold(ManifoldSpec("swiss_roll_hole"), 2000, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
