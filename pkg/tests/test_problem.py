from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import hermite as npherm

from gpbif import SIX_BRANCHES, BranchLabel, GpParameters, GpProblem, State, build_mesh
from gpbif.newton import sparse_solve
from gpbif.problem import hermite_eval, rotate_phase

PARAMS = GpParameters(mu=0.9, omega=0.2)


def test_residual_of_zero_is_exactly_zero(small_problem):
    g = small_problem.residual(np.zeros(small_problem.n), PARAMS)
    assert np.array_equal(g, np.zeros(small_problem.n))


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_jacobian_matches_central_differences(seed):
    _, space = build_mesh(12.0, 4, 2)
    prob = GpProblem(space)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(prob.n)
    h = rng.standard_normal(prob.n)
    J = prob.jacobian(x, PARAMS)
    Jh = J @ h
    errs = []
    for eps in (1e-3, 5e-4):
        fd = (prob.residual(x + eps * h, PARAMS) - prob.residual(x - eps * h, PARAMS)) / (2 * eps)
        errs.append(np.linalg.norm(fd - Jh) / np.linalg.norm(Jh))
    assert errs[1] <= 1e-6
    # second-order (Richardson) behaviour of the central difference
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.02)


def test_residual_and_jacobian_share_assembly(small_problem, rng):
    x = rng.standard_normal(small_problem.n)
    g, J = small_problem.residual_and_jacobian(x, PARAMS)
    assert np.allclose(g, small_problem.residual(x, PARAMS), atol=1e-12)
    assert abs(J - small_problem.jacobian(x, PARAMS)).max() < 1e-12
    lin = small_problem.linear_operator(PARAMS)
    assert abs(J - lin - small_problem.nonlinear_matrix(x)).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 2 * np.pi), st.integers(0, 2**31 - 1))
def test_phase_rotation_invariance(theta, seed):
    _, space = build_mesh(12.0, 4, 2)
    prob = GpProblem(space)
    x = np.random.default_rng(seed).standard_normal(prob.n)
    y = rotate_phase(x, theta)
    g0 = np.linalg.norm(prob.residual(x, PARAMS))
    g1 = np.linalg.norm(prob.residual(y, PARAMS))
    assert abs(g1 - g0) <= 1e-10 * max(1.0, g0)
    o0, o1 = prob.observables(x), prob.observables(y)
    assert o1.n_bosons == pytest.approx(o0.n_bosons, rel=1e-10)
    assert o1.rho_inf == pytest.approx(o0.rho_inf, rel=1e-10)


def test_linear_limit_eigenvalues():
    # harmonic oscillator with trap 1/2 W^2 r^2: eigenvalues (m + n + 1) W
    w = 0.2
    exact = w * np.array([1, 2, 2, 3, 3, 3])
    errs = []
    for nx in (12, 24):
        _, space = build_mesh(12.0, nx, 2)
        prob = GpProblem(space)
        h = space.n_int
        K = (prob.A + w**2 * prob.B)[:h, :h].tocsc()
        M = prob.M[:h, :h].tocsc()
        ev = np.sort(spla.eigsh(K, 6, M, sigma=0.0, which="LM")[0])
        errs.append(np.abs(ev / exact - 1.0))
    assert errs[1].max() < 2e-3
    # P2 eigenvalues converge like h^4
    assert np.all(errs[0] / errs[1] > 8.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 6), st.floats(-3, 3))
def test_hermite_polynomials(j, x):
    ref = npherm.hermval(x, [0] * j + [1])
    assert hermite_eval(j, x) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_hermite_eval_examples():
    assert hermite_eval(2, 1.5) == pytest.approx(4 * 1.5**2 - 2)
    assert hermite_eval(3, -0.5) == pytest.approx(8 * (-0.5) ** 3 - 12 * (-0.5))
    with pytest.raises(ValueError):
        hermite_eval(-1, 0.0)


def test_branch_labels():
    assert [str(b) for b in SIX_BRANCHES] == ["|0,0>", "|0,1>v", "|1,0>", "|2,0>", "|0,2>r", "|1,1>"]
    for b in SIX_BRANCHES:
        assert BranchLabel.parse(str(b)) == b
    assert BranchLabel.parse("1,1") == BranchLabel(1, 1)
    assert [b.mu_crit(0.2) for b in SIX_BRANCHES] == pytest.approx([0.2, 0.4, 0.4, 0.6, 0.6, 0.6])
    for bad in ("1", "a,b", "1,2,3"):
        with pytest.raises(ValueError):
            BranchLabel.parse(bad)
    with pytest.raises(ValueError):
        BranchLabel(-1, 0)
    with pytest.raises(ValueError):
        BranchLabel(0, 1, vortex=True, ring=True)


def test_parameters_validation():
    with pytest.raises(ValueError):
        GpParameters(0.5, 0.0)


@pytest.mark.parametrize("label", SIX_BRANCHES, ids=str)
def test_hermite_guess(small_problem, label):
    x = small_problem.hermite_guess(label, PARAMS, 0.3)
    assert small_problem.norm(x) == pytest.approx(0.3)
    h = small_problem.space.n_int
    if label.vortex:
        assert np.abs(x[h:]).max() > 0
    else:
        assert np.abs(x[h:]).max() == 0.0
    with pytest.raises(ValueError):
        small_problem.hermite_guess(label, PARAMS, 0.0)


def test_observables(small_problem, rng):
    x = rng.standard_normal(small_problem.n)
    obs = small_problem.observables(x)
    assert obs.n_bosons == pytest.approx(x @ (small_problem.M @ x))
    h = small_problem.space.n_int
    assert obs.rho_inf == pytest.approx(np.max(x[:h] ** 2 + x[h:] ** 2))
    # full layout gives the same numbers
    full = small_problem.space.to_full(x)
    assert small_problem.observables(full) == obs
    zero = small_problem.observables(np.zeros(small_problem.n))
    assert zero.n_bosons == 0.0 and zero.rho_inf == 0.0


def test_block_solve_matches_full_solve(small_problem, rng):
    h = small_problem.space.n_int
    x = rng.standard_normal(small_problem.n)
    x[h:] = 0.0  # real state: decoupled Jacobian
    g, J = small_problem.residual_and_jacobian(x, PARAMS)
    d = small_problem.solve(J, g)
    assert np.array_equal(d[h:], np.zeros(h))
    assert np.allclose(d, sparse_solve(J, g), rtol=1e-8, atol=1e-10)


def test_state_container(small_problem, rng):
    space = small_problem.space
    x = rng.standard_normal(small_problem.n)
    s = State.from_free(space, x, PARAMS)
    assert np.array_equal(s.free, x)
    assert s.params == PARAMS
    with pytest.raises(ValueError):
        State(space, np.zeros(3), 0.1, 0.2)


def test_dimension_checks(small_problem):
    with pytest.raises(ValueError):
        small_problem.residual(np.zeros(small_problem.n + 1), PARAMS)
    with pytest.raises(ValueError):
        small_problem.norm(np.zeros(small_problem.n), "Linf")
