"""Discrete empirical interpolation of the cubic term.

The target of the interpolation is the assembled, free-layout nonlinear
vector ``n(x)``.  Online, ``n`` and the matching rows of ``C(x)`` are only
assembled on the elements touching a magic dof, so the cost of one reduced
Newton iteration depends on ``N``, ``Q`` and the size of that element
patch but not on the mesh.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import local_nonlinear
from .rom import ReducedBasis, SnapshotSet

log = logging.getLogger(__name__)


def greedy_magic_indices(U: np.ndarray) -> np.ndarray:
    """Greedy DEIM point selection (largest interpolation residual; ties go to the lowest index)."""
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] == 0:
        raise ValueError("basis must be a nonempty 2-D array")
    idx = [int(np.argmax(np.abs(U[:, 0])))]
    for l in range(1, U.shape[1]):
        c = np.linalg.solve(U[idx, :l], U[idx, l])
        r = U[:, l] - U[:, :l] @ c
        idx.append(int(np.argmax(np.abs(r))))
    return np.asarray(idx, dtype=np.int64)


@dataclass
class DeimModel:
    """DEIM approximation ``n(x) ~ U (P^T U)^{-1} P^T n(x)``.

    The GP nonlinearity enters with a single parameter-independent
    coefficient, so ``theta`` is the constant ``(1.0,)``.
    """

    U: np.ndarray
    magic_indices: np.ndarray
    basis: ReducedBasis = field(repr=False)
    singular_values: np.ndarray | None = None
    theta: tuple = (1.0,)

    def __post_init__(self):
        self.U = np.ascontiguousarray(self.U, dtype=float)
        self.magic_indices = np.asarray(self.magic_indices, dtype=np.int64)
        n, q = self.U.shape
        if self.magic_indices.shape != (q,):
            raise ValueError("one magic index per DEIM basis column is required")
        if np.unique(self.magic_indices).size != q:
            raise ValueError("magic indices must be distinct")
        if n != self.basis.V.shape[0]:
            raise ValueError("DEIM basis and reduced basis live in different spaces")
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                self.PtU_lu = sla.lu_factor(self.U[self.magic_indices])
            except (sla.LinAlgWarning, ValueError) as exc:
                raise ValueError(f"P^T U is singular: {exc}") from None
        # V^T U (P^T U)^{-1}, stored as N x Q
        VtU = self.basis.V.T @ self.U
        self.proj = sla.lu_solve(self.PtU_lu, VtU.T, trans=1).T
        self._setup_sampling()

    @property
    def Q(self) -> int:
        return self.U.shape[1]

    def _setup_sampling(self):
        space = self.basis.problem.space
        cd = space.cell_dofs
        h = space.n_int
        comp = self.magic_indices // h
        scal = space.interior[self.magic_indices % h]  # scalar dof numbers
        touching = np.isin(cd, scal).any(axis=1)
        self.sample_elements = np.flatnonzero(touching)
        cds = cd[self.sample_elements]
        ne, nl = cds.shape
        geo = space.geometry
        self._phi = geo.phi
        self._weights = geo.weights[self.sample_elements]
        # rows of V for every local (dof, component) of the sample patch
        fidx = space._free_index[cds]  # (ne, nl), -1 on boundary
        V = self.basis.V
        Vloc = np.zeros((ne, nl, 2, V.shape[1]))
        ok = fidx >= 0
        Vloc[:, :, 0][ok] = V[fidx[ok]]
        Vloc[:, :, 1][ok] = V[fidx[ok] + h]
        self.V_loc = Vloc
        # selector summing element contributions (e, c, a) into magic rows
        rows, cols = [], []
        for i, (c, s) in enumerate(zip(comp, scal)):
            e, a = np.nonzero(cds == s)
            rows.append(np.full(e.size, i))
            cols.append((e * 2 + c) * nl + a)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        self.selector = sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.Q, ne * 2 * nl)
        )

    def sampled_nonlinearity(self, xN: np.ndarray, with_matrix: bool = True):
        """Magic rows of ``n(V xN)`` and of ``C(V xN) V``."""
        xN = np.asarray(xN, dtype=float)
        if xN.shape != (self.basis.N,):
            raise ValueError(f"reduced vector of length {self.basis.N} expected")
        zloc = self.V_loc @ xN  # (ne, nl, 2)
        nvec, cloc = local_nonlinear(self._phi, self._weights, zloc, with_matrix)
        g = self.selector @ nvec.ravel()
        if not with_matrix:
            return g, None
        w = np.einsum("ecsab,ebsn->ecan", cloc, self.V_loc, optimize=True)
        return g, self.selector @ w.reshape(-1, w.shape[-1])

    def reduced_nonlinearity(self, xN: np.ndarray):
        """Reduced nonlinear vector ``(N,)`` and Jacobian contribution ``(N, N)``."""
        g, cm = self.sampled_nonlinearity(xN)
        return self.proj @ g, self.proj @ cm

    def interpolate(self, g_full: np.ndarray) -> np.ndarray:
        """DEIM reconstruction of a full-order vector from its magic entries."""
        g_full = np.asarray(g_full, dtype=float)
        coef = sla.lu_solve(self.PtU_lu, g_full[self.magic_indices])
        return self.U @ coef


def nonlinear_snapshots(snapshots: SnapshotSet, problem, basis: ReducedBasis | None = None) -> np.ndarray:
    """Columns ``n(x)`` for every state snapshot ``x``.

    With ``basis`` the columns ``n(V V^T X x)`` at the projected states are
    appended.  Online iterates live in ``span(V)``, and without these the
    interpolation error stalls at the level of the POD projection error.
    """
    S = snapshots.matrix
    cols = [problem.nonlinear_vector(x) for x in S.T]
    if basis is not None:
        P = basis.V @ (basis.V.T @ np.asarray(basis.X @ S))
        cols += [problem.nonlinear_vector(x) for x in P.T]
    return np.column_stack(cols)


def deim_build(nonlinear_snapshots, basis: ReducedBasis, q: int | None = None, tol: float = 1e-14) -> DeimModel:
    """POD of the nonlinear snapshots followed by greedy magic-point selection.

    ``q`` fixes the number of DEIM modes; otherwise the smallest ``Q`` whose
    retained squared-singular-value fraction reaches ``1 - tol`` is used.
    """
    S = np.asarray(nonlinear_snapshots, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] != basis.V.shape[0]:
        raise ValueError("nonlinear snapshot length does not match the reduced basis")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("all-zero nonlinear snapshot set")
    rank = int(np.sum(s > s[0] * max(S.shape) * np.finfo(float).eps))
    if q is None:
        if not 0.0 < tol < 1.0:
            raise ValueError("DEIM tolerance must lie in (0, 1)")
        e = np.cumsum(s**2) / np.sum(s**2)
        q = int(np.searchsorted(e, 1.0 - tol) + 1)
        q = min(q, rank)
    elif q < 1:
        raise ValueError("q must be positive")
    elif q > rank:
        warnings.warn(f"requested Q={q} exceeds snapshot rank {rank}; using Q={rank}", RuntimeWarning, stacklevel=2)
        q = rank
    U = U[:, :q]
    magic = greedy_magic_indices(U)
    log.info("DEIM: %d snapshots -> Q = %d", S.shape[1], q)
    return DeimModel(U, magic, basis, singular_values=s)


def deim_reduced_nonlinearity(model: DeimModel, xN: np.ndarray):
    return model.reduced_nonlinearity(xN)
