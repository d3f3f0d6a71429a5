import numpy as np
import pytest

from mlgmsfem.assembly import FineProblem, PermeabilityField
from mlgmsfem.grid import build_hierarchy


def layered_field(dims, contrast=100.0, seed=0, mask=None):
    """Log-uniform random cell field in [1, contrast]."""
    nx, ny = dims
    rng = np.random.default_rng(seed)
    return PermeabilityField(contrast ** rng.random((ny, nx)), mask)


@pytest.fixture
def hier2():
    return build_hierarchy((20, 20), [(4, 4), (5, 5)])


@pytest.fixture
def hier3():
    return build_hierarchy((40, 40), [(4, 4), (2, 2), (5, 5)])


@pytest.fixture
def fine3(hier3):
    field = layered_field(hier3.fine_dims, seed=3)
    return FineProblem.build(hier3, field)


@pytest.fixture(scope="session")
def cascade3():
    """Small 3-level cascade on a random field, shared read-only."""
    from mlgmsfem.offline import CascadeConfig, build_cascade

    hier = build_hierarchy((40, 40), [(4, 4), (2, 2), (5, 5)])
    field = layered_field(hier.fine_dims, seed=3)
    return build_cascade(hier, field, CascadeConfig((3, 3)))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
