from __future__ import annotations

import numpy as np
import pytest

from gpbif import ContinuationConfig, GpParameters, ParameterGrid, ReducedBackend, SIX_BRANCHES, trace_branch
from gpbif.deim import DeimModel, deim_build, greedy_magic_indices, nonlinear_snapshots
from gpbif.rom import ReducedSystem


@pytest.fixture(scope="module")
def deim_model(coarse_run, coarse_basis):
    problem = coarse_run[0]
    snaps, basis = coarse_basis
    nl = nonlinear_snapshots(snaps, problem, basis)
    return nl, deim_build(nl, basis)


def test_single_snapshot_base_case(coarse_basis):
    _, basis = coarse_basis
    n = basis.V.shape[0]
    u = np.zeros(n)
    u[[5, 9]] = -2.0  # tie: first occurrence wins
    u[7] = 1.5
    model = deim_build(u, basis)
    assert model.Q == 1 and model.magic_indices.tolist() == [5]


def test_disjoint_supports(coarse_basis):
    _, basis = coarse_basis
    n = basis.V.shape[0]
    support = [3, 40, 100, 250]
    S = np.zeros((n, 4))
    for j, i in enumerate(support):
        S[i, j] = 1.0 + j
    model = deim_build(S, basis)
    assert sorted(model.magic_indices.tolist()) == sorted(support)
    for g in S.T:
        assert np.allclose(model.interpolate(g), g, atol=1e-14)


def test_greedy_rejects_empty():
    with pytest.raises(ValueError):
        greedy_magic_indices(np.zeros((4, 0)))


def test_interpolation_exact_at_magic_indices(deim_model, rng):
    _, model = deim_model
    g = rng.standard_normal(model.U.shape[0])
    rec = model.interpolate(g)
    assert np.abs(rec[model.magic_indices] - g[model.magic_indices]).max() <= 1e-12 * np.abs(g).max()
    assert np.unique(model.magic_indices).size == model.Q


def test_exact_at_full_rank(coarse_basis, rng):
    _, basis = coarse_basis
    S = rng.standard_normal((basis.V.shape[0], 5))
    model = deim_build(S, basis, q=5)
    g = S @ rng.standard_normal(5)
    assert np.linalg.norm(g - model.interpolate(g)) <= 1e-10 * np.linalg.norm(g)


def test_reconstruction_bound_on_training_snapshots(deim_model):
    nl, model = deim_model
    s = model.singular_values
    tail = np.sqrt(np.sum(s[model.Q:] ** 2))
    amp = np.linalg.norm(np.linalg.inv(model.U[model.magic_indices]), 2)
    for g in nl.T:
        assert np.linalg.norm(g - model.interpolate(g)) <= amp * tail + 1e-10


def test_sampled_assembly_matches_global_rows(deim_model, coarse_basis, rng):
    _, model = deim_model
    _, basis = coarse_basis
    asm = basis.problem.assembler
    for _ in range(3):
        xN = rng.standard_normal(basis.N)
        g, cv = model.sampled_nonlinearity(xN)
        cdata, n_full = asm.assemble(basis.lift(xN))
        C = asm._matrix(cdata)
        rows = model.magic_indices
        assert np.abs(g - n_full[rows]).max() <= 1e-14 * max(1.0, np.abs(n_full).max())
        ref = C[rows] @ basis.V
        assert np.abs(cv - ref).max() <= 1e-13 * max(1.0, np.abs(ref).max())


def test_zero_state(deim_model, coarse_basis):
    _, model = deim_model
    _, basis = coarse_basis
    g, J = model.reduced_nonlinearity(np.zeros(basis.N))
    assert np.array_equal(g, np.zeros(basis.N)) and np.array_equal(J, np.zeros((basis.N, basis.N)))
    with pytest.raises(ValueError):
        model.reduced_nonlinearity(np.zeros(basis.N + 2))


def test_agreement_with_exact_projection_on_training_points(deim_model, coarse_basis):
    _, model = deim_model
    snaps, basis = coarse_basis
    for k in range(0, snaps.count, 5):
        _, mu, om = snaps.tags[k]
        xN = basis.project(snaps.matrix[:, k])
        p = GpParameters(mu, om)
        exact = ReducedSystem(basis, p).residual(xN)
        approx = ReducedSystem(basis, p, model).residual(xN)
        assert np.abs(exact - approx).max() <= 1e-6


def test_truncation_warning(coarse_basis, rng):
    _, basis = coarse_basis
    S = rng.standard_normal((basis.V.shape[0], 2))
    S = np.column_stack([S, S.sum(axis=1)])
    with pytest.warns(RuntimeWarning):
        model = deim_build(S, basis, q=3)
    assert model.Q == 2
    with pytest.raises(ValueError):
        deim_build(np.zeros((basis.V.shape[0], 2)), basis)
    with pytest.raises(ValueError):
        deim_build(np.ones((3, 1)), basis)


def test_model_validation(deim_model, coarse_basis):
    _, model = deim_model
    _, basis = coarse_basis
    with pytest.raises(ValueError):
        DeimModel(model.U, model.magic_indices[:-1], basis)
    dup = model.magic_indices.copy()
    dup[1] = dup[0]
    with pytest.raises(ValueError):
        DeimModel(model.U, dup, basis)


def test_deim_trace_close_to_galerkin_rom(deim_model, coarse_run, coarse_basis):
    _, model = deim_model
    _, grid, curves = coarse_run
    _, basis = coarse_basis
    lab = SIX_BRANCHES[1]
    g1 = ParameterGrid(grid.mu, [0.2])
    a = trace_branch(lab, g1, ReducedBackend(basis), ContinuationConfig())
    b = trace_branch(lab, g1, ReducedBackend(basis, model), ContinuationConfig())
    assert a.first_nontrivial_mu == b.first_nontrivial_mu
    assert np.max(np.abs(a.n_bosons - b.n_bosons)) < 1e-3
