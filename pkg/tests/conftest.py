from __future__ import annotations

import numpy as np
import pytest

from gpbif import (
    SIX_BRANCHES,
    ContinuationConfig,
    FullOrderBackend,
    GpProblem,
    ParameterGrid,
    SnapshotSet,
    build_mesh,
    pod,
    trace_diagram,
)

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_problem():
    _, space = build_mesh(12.0, 8, 2)
    return GpProblem(space)


@pytest.fixture(scope="session")
def p1_problem():
    _, space = build_mesh(12.0, 6, 1)
    return GpProblem(space)


@pytest.fixture(scope="session")
def coarse_run():
    """Six-branch FOM trace on a coarse P2 mesh with its states."""
    _, space = build_mesh(12.0, 12, 2)
    problem = GpProblem(space)
    grid = ParameterGrid.uniform(0.0, 1.2, 0.02, [0.2])
    curves = trace_diagram(SIX_BRANCHES, grid, FullOrderBackend(problem), ContinuationConfig(), keep_states=True)
    return problem, grid, curves


@pytest.fixture(scope="session")
def coarse_basis(coarse_run):
    problem, _, curves = coarse_run
    snaps = SnapshotSet.from_curves(curves, n_train=20)
    return snaps, pod(snaps, problem, "H1", 1e-9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
