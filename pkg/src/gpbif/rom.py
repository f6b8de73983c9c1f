"""POD reduced basis and the Galerkin-reduced Newton system.

Offline, converged full-order states from all branches are pooled into a
single snapshot matrix and compressed by POD (method of snapshots).
Online, Newton runs on the ``N`` reduced coefficients.  Without
hyper-reduction the cubic term is still assembled on the full mesh at the
lifted iterate and projected, so the online cost keeps scaling with
``N_h``; pass a :class:`~gpbif.deim.DeimModel` to remove that dependence.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fem import inner_product_matrix
from .newton import NewtonConfig, newton_solve, sparse_solve
from .problem import BranchLabel, GpParameters, GpProblem, Observables

log = logging.getLogger(__name__)


@dataclass
class SnapshotSet:
    """Free-layout full-order states as columns, tagged ``(label, mu, omega)``."""

    matrix: np.ndarray
    tags: list = field(default_factory=list)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim == 1:
            self.matrix = self.matrix[:, None]
        if self.tags and len(self.tags) != self.matrix.shape[1]:
            raise ValueError("one tag per snapshot column is required")

    @property
    def count(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def from_curves(cls, curves, n_train: int | None = None, include_trivial: bool = False) -> "SnapshotSet":
        """Pool converged states of traced branches (traced with ``keep_states``).

        ``n_train`` points per branch are taken at uniformly spaced indices of
        the branch's ``mu`` grid; non-converged points are skipped.
        """
        cols, tags = [], []
        for c in curves:
            if c.states is None:
                raise ValueError("curve was traced without keep_states=True")
            k = len(c.records)
            idx = np.arange(k) if n_train is None or n_train >= k else np.unique(np.linspace(0, k - 1, n_train).round().astype(int))
            for i in idx:
                rec, x = c.records[i], c.states[i]
                if not rec.converged or x is None:
                    continue
                if not include_trivial and rec.n_bosons == 0.0:
                    continue
                cols.append(np.asarray(x))
                tags.append((c.label, rec.mu, rec.omega))
        if not cols:
            raise ValueError("no usable snapshots in the given curves")
        return cls(np.column_stack(cols), tags)


@dataclass
class ReducedBasis:
    """Column-orthonormal basis ``V`` (w.r.t. ``X``) with projected operators."""

    V: np.ndarray
    ip: str
    eigenvalues: np.ndarray
    A_N: np.ndarray
    B_N: np.ndarray
    M_N: np.ndarray
    K_N: np.ndarray
    problem: GpProblem | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.V.shape[1]

    @property
    def X(self):
        return inner_product_matrix(self.problem.space, self.ip, free=True)

    def tail_energy(self) -> float:
        """Sum of the discarded POD eigenvalues."""
        return float(np.sum(np.clip(self.eigenvalues[self.N:], 0.0, None)))

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.V.shape[0]:
            raise ValueError(f"full-order vector of length {self.V.shape[0]} expected")
        return self.V.T @ (self.X @ x)

    def lift(self, xN: np.ndarray) -> np.ndarray:
        xN = np.asarray(xN, dtype=float)
        if xN.shape[0] != self.N:
            raise ValueError(f"reduced vector of length {self.N} expected")
        return self.V @ xN

    @classmethod
    def from_matrix(cls, problem: GpProblem, V: np.ndarray, ip: str = "H1", eigenvalues=None) -> "ReducedBasis":
        """Wrap an already X-orthonormal basis and precompute reduced operators."""
        V = np.ascontiguousarray(V, dtype=float)
        proj = lambda A: V.T @ (A @ V)
        return cls(
            V=V,
            ip=ip,
            eigenvalues=np.asarray(eigenvalues if eigenvalues is not None else np.ones(V.shape[1])),
            A_N=proj(problem.A),
            B_N=proj(problem.B),
            M_N=proj(problem.M),
            K_N=proj(problem.K),
            problem=problem,
        )


def project_state(basis: ReducedBasis, x_full: np.ndarray) -> np.ndarray:
    return basis.project(x_full)


def lift_state(basis: ReducedBasis, x_reduced: np.ndarray) -> np.ndarray:
    return basis.lift(x_reduced)


def _orthonormalize(V: np.ndarray, X, passes: int = 2) -> np.ndarray:
    # modified Gram-Schmidt in the X inner product, repeated for stability
    V = V.copy()
    for _ in range(passes):
        XV = np.asarray(X @ V)
        for k in range(V.shape[1]):
            for j in range(k):
                c = V[:, j] @ XV[:, k]
                V[:, k] -= c * V[:, j]
                XV[:, k] -= c * XV[:, j]
            nrm = np.sqrt(V[:, k] @ XV[:, k])
            V[:, k] /= nrm
            XV[:, k] /= nrm
    return V


def pod(snapshots: SnapshotSet, problem: GpProblem, ip: str = "H1", tol: float = 1e-9, n_max: int = 200) -> ReducedBasis:
    """Proper orthogonal decomposition by the method of snapshots.

    Keeps the smallest ``N <= n_max`` whose retained eigenvalue fraction is at
    least ``1 - tol``.  Modes whose Gram eigenvalue is at round-off level are
    never retained.
    """
    if not 0.0 < tol < 1.0:
        raise ValueError("POD tolerance must lie in (0, 1)")
    S = snapshots.matrix
    if S.shape[0] != problem.n:
        raise ValueError("snapshot length does not match the full-order space")
    X = inner_product_matrix(problem.space, ip, free=True)
    XS = np.asarray(X @ S)
    gram = S.T @ XS
    gram = 0.5 * (gram + gram.T)
    lam, U = np.linalg.eigh(gram)
    order = np.argsort(lam)[::-1]
    lam, U = lam[order], U[:, order]
    total = np.sum(np.clip(lam, 0.0, None))
    if total <= 0.0:
        raise ValueError("all-zero snapshot set")
    frac = np.cumsum(np.clip(lam, 0.0, None)) / total
    n_keep = int(np.searchsorted(frac, 1.0 - tol) + 1)
    rank = int(np.sum(lam > lam[0] * max(S.shape) * np.finfo(float).eps))
    n_keep = max(1, min(n_keep, n_max, rank))
    V = S @ (U[:, :n_keep] / np.sqrt(lam[:n_keep]))
    V = _orthonormalize(V, X)
    log.info("POD: %d snapshots -> N = %d (tol %.1e, %s)", S.shape[1], n_keep, tol, ip)
    return ReducedBasis.from_matrix(problem, V, ip=ip, eigenvalues=np.clip(lam, 0.0, None))


class ReducedSystem:
    """Reduced residual ``G_N`` and Jacobian ``J_N`` at fixed parameters."""

    def __init__(self, basis: ReducedBasis, params: GpParameters, deim=None):
        self.basis = basis
        self.params = params
        self.deim = deim
        w2 = params.omega**2
        self.L_N = basis.A_N + w2 * basis.B_N - params.mu * basis.M_N

    def nonlinear(self, xN: np.ndarray):
        if self.deim is not None:
            return self.deim.reduced_nonlinearity(xN)
        b = self.basis
        asm = b.problem.assembler
        cdata, nvec = asm.assemble(b.V @ xN)
        C = asm._matrix(cdata)
        return b.V.T @ nvec, b.V.T @ (C @ b.V)

    def residual_and_jacobian(self, xN: np.ndarray):
        xN = np.asarray(xN, dtype=float)
        if xN.shape != (self.basis.N,):
            raise ValueError(f"reduced vector of length {self.basis.N} expected")
        g, jn = self.nonlinear(xN)
        return self.L_N @ xN + g, self.L_N + jn

    def residual(self, xN):
        return self.residual_and_jacobian(xN)[0]

    def jacobian(self, xN):
        return self.residual_and_jacobian(xN)[1]

    def solve(self, J, G):
        return sparse_solve(J, G)


def reduced_residual(xN: np.ndarray, basis: ReducedBasis, params: GpParameters, deim=None) -> np.ndarray:
    return ReducedSystem(basis, params, deim).residual(xN)


def reduced_jacobian(xN: np.ndarray, basis: ReducedBasis, params: GpParameters, deim=None) -> np.ndarray:
    return ReducedSystem(basis, params, deim).jacobian(xN)


class ReducedBackend:
    """Online solver with the same interface as :class:`~gpbif.continuation.FullOrderBackend`.

    Guesses are built in the full-order space and projected once per
    ``(label, Omega)``; solutions stay in reduced coordinates and are lifted
    on demand (``to_full_order``).
    """

    def __init__(self, basis: ReducedBasis, deim=None):
        self.basis = basis
        self.deim = deim
        self.problem = basis.problem
        self._guesses = {}
        self._norm_mats = {"L2": basis.M_N, "H1": basis.M_N + basis.K_N}

    def guess_direction(self, label: BranchLabel, omega: float):
        key = (label, omega)
        if key not in self._guesses:
            u = self.problem.hermite_guess(label, GpParameters(0.0, omega), 1.0)
            self._guesses[key] = (self.basis.project(u), self.problem.quartic_moment(u))
        return self._guesses[key]

    def solve(self, x0: np.ndarray, params: GpParameters, cfg: NewtonConfig):
        return newton_solve(x0, ReducedSystem(self.basis, params, self.deim), cfg)

    def norm(self, xN: np.ndarray, kind: str = "L2") -> float:
        mat = self._norm_mats[kind]
        return float(np.sqrt(max(xN @ (mat @ xN), 0.0)))

    def observables(self, xN: np.ndarray) -> Observables:
        nb = float(xN @ (self.basis.M_N @ xN))
        x = self.basis.V @ xN
        h = x.shape[0] // 2
        rho = x[:h] ** 2 + x[h:] ** 2
        return Observables(max(nb, 0.0), float(rho.max()))

    def to_full_order(self, xN: np.ndarray) -> np.ndarray:
        return self.basis.lift(xN)


def reduced_newton_backend(basis: ReducedBasis, deim=None) -> ReducedBackend:
    return ReducedBackend(basis, deim)
