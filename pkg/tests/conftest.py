import numpy as np
import pytest

from cpicmpm.engine import MaterialState, SimConfig
from cpicmpm.grid import GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid32():
    return GridSpec.cube(32)


def random_state(rng, n, grid, margin=4, speed=1.0, strain=0.05):
    lo = grid.dx * margin
    hi = grid.upper - grid.dx * margin
    x = rng.uniform(lo, hi, size=(n, 3))
    st = MaterialState.create(x, v=rng.normal(scale=speed, size=(n, 3)), volume=rng.uniform(0.5, 2.0, n) * (grid.dx / 2) ** 3)
    st.C = rng.normal(scale=1.0, size=(n, 3, 3))
    st.F = np.eye(3) + rng.normal(scale=strain, size=(n, 3, 3))
    return st


def small_config(grid, **kw):
    kw.setdefault("dt", 2e-4)
    kw.setdefault("substeps", 5)
    return SimConfig(grid=grid, **kw)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
