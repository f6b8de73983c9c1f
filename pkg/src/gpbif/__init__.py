"""Steady Gross-Pitaevskii bifurcation diagrams with finite elements, POD and DEIM."""
from __future__ import annotations

from .continuation import (
    BranchCurve,
    BranchRecord,
    ContinuationConfig,
    FullOrderBackend,
    ParameterGrid,
    trace_branch,
    trace_diagram,
)
from .deim import DeimModel, deim_build, deim_reduced_nonlinearity
from .fem import FeSpace, Mesh, assemble_constant_matrix, assemble_nonlinear, build_mesh, inner_product
from .newton import NewtonConfig, NewtonReport, SingularJacobian, newton_solve
from .problem import SIX_BRANCHES, BranchLabel, GpParameters, GpProblem, Observables, State
from .rom import ReducedBackend, ReducedBasis, SnapshotSet, lift_state, pod, project_state, reduced_newton_backend

__version__ = "0.1.0"
