import numpy as np
import pytest

from poissonconc import HomogeneousBox, HomogeneousTorus, PointConfiguration, Window


@pytest.fixture
def triangle():
    return PointConfiguration(np.array([[0.0, 0.0], [0.05, 0.0], [0.025, 0.04]]))


@pytest.fixture
def star():
    # centre with three leaves at distance 0.09, leaves pairwise about 0.156 apart
    ang = np.deg2rad([90.0, 210.0, 330.0])
    leaves = 0.5 + 0.09 * np.column_stack([np.cos(ang), np.sin(ang)])
    return PointConfiguration(np.vstack([[0.5, 0.5], leaves]))


@pytest.fixture
def unit_torus():
    return Window.unit(2, periodic=True)


@pytest.fixture
def torus100(unit_torus):
    return HomogeneousTorus(100.0, unit_torus)


@pytest.fixture
def box100():
    return HomogeneousBox(100.0, Window.unit(2))


def brute_edges(points, rho, periodic=False):
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    out = set()
    for i in range(n):
        for j in range(i + 1, n):
            d = pts[i] - pts[j]
            if periodic:
                d = d - np.round(d)
            dist = float(np.sqrt(d @ d))
            if 0 < dist <= rho:
                out.add((i, j))
    return out


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
