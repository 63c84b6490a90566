import time

import numpy as np
import pytest

from resilient_consensus.experiment import Scenario, bundled_scenarios, execute
from resilient_consensus.simulator import SimConfig, run
from resilient_consensus.attack import AttackModel
from resilient_consensus.design import build_design
from resilient_consensus.topology import AgentGraph, system_matrix

# hand-typed system matrix of the 5-agent example network (independent of topology.py)
EXAMPLE_A = np.array(
    [
        [-4, 1, 1, 0, 1],
        [1, -2, 1, 0, 0],
        [1, 1, -3, 1, 0],
        [0, 0, 1, -1, 0],
        [1, 0, 0, 0, -1],
    ],
    dtype=float,
)
EXAMPLE_L = np.array(
    [
        [3, -1, -1, 0, -1],
        [-1, 2, -1, 0, 0],
        [-1, -1, 3, -1, 0],
        [0, 0, -1, 1, 0],
        [-1, 0, 0, 0, 1],
    ],
    dtype=float,
)
EXAMPLE_B = np.array([1.0, 0, 0, 0, 0])
EXAMPLE_EDGES = ((0, 1), (0, 2), (0, 4), (1, 2), (2, 3))
X0 = 7.33861
EPSILON = 186.39439
MU = 0.27775

ACCEPTANCE = []


@pytest.fixture(scope="session")
def example_graph():
    return AgentGraph(5, EXAMPLE_EDGES, (1, 0, 0, 0, 0))


@pytest.fixture(scope="session")
def example_design(example_graph):
    A, B = system_matrix(example_graph)
    return build_design(A, B, beta=1.0)


@pytest.fixture(scope="session")
def warm_kernel():
    """Compile the integration kernel once so timed runs measure integration only."""
    g = AgentGraph(1, (), (1,))
    A, B = system_matrix(g)
    run(SimConfig(dt=1e-3, horizon=0.01, x0=1.0), build_design(A, B, beta=0.0), AttackModel(), None, None)
    return True


@pytest.fixture(scope="session")
def bundled_runs(tmp_path_factory, warm_kernel):
    """Every bundled scenario run once, with files on disk."""
    out = {}
    root = tmp_path_factory.mktemp("bundled")
    for name in bundled_scenarios():
        scen = Scenario.load(name)
        t0 = time.perf_counter()
        doc, result = execute(scen, None, root / name)
        out[name] = {"doc": doc, "result": result, "dir": root / name,
                     "wall": time.perf_counter() - t0, "scenario": scen}
    return out


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
