import numpy as np
import pytest

from localgibbs.habitat import RsfParams, categorical_raster, synthetic_habitat


@pytest.fixture(scope="session")
def patchy():
    """6 km x 6 km four-category map with 0.1 km cells."""
    return synthetic_habitat(60, 60, 0.1, patch_scale=0.3, seed=1)


@pytest.fixture(scope="session")
def patchy_params():
    return RsfParams([2.0, 1.0, 0.5, 0.0], {3})


@pytest.fixture(scope="session")
def flat():
    """A single huge cell: the habitat weight is constant wherever a step
    can reach."""
    return categorical_raster(np.zeros((1, 1), int), ["all"], origin=(-500.0, -500.0), cell_size=1000.0)


@pytest.fixture(scope="session")
def flat_params():
    return RsfParams([0.0], {0})


def interior_track(raster, params, kernel, T, seed, margin=1.0, init=None):
    """Simulated track that stays at least ``margin`` km from the map edge."""
    from localgibbs.simulator import simulate_track, simulate_until

    x0, x1, y0, y1 = raster.extent
    start = init or (0.5 * (x0 + x1), 0.5 * (y0 + y1))
    tr, _ = simulate_until(lambda a: simulate_track(T, start, kernel, raster, params, seed=[seed, a]),
                           raster, edge_margin=margin)
    return tr


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
