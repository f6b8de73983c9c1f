"""Steady Gross-Pitaevskii problem in a harmonic trap.

Solves, for the real and imaginary parts of ``phi``,

    -1/2 Lap(phi) + |phi|^2 phi + 1/2 Omega^2 r^2 phi - mu phi = 0

with homogeneous Dirichlet data.  The discrete residual is

    G(x) = (A + Omega^2 B - mu M) x + n(x),

where ``B`` is the unit-trap potential matrix, so the linear limit has
eigenvalues ``(m + n + 1) Omega`` with Hermite-Gauss eigenfunctions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FeSpace, NonlinearAssembler
from .newton import sparse_solve


@dataclass(frozen=True)
class GpParameters:
    mu: float
    omega: float

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"trap strength must be positive, got {self.omega}")


@dataclass(frozen=True)
class BranchLabel:
    """Hermite quantum numbers of a branch's linear limit.

    ``vortex`` pairs ``|m,n>`` (real part) with ``|n,m>`` (imaginary part),
    e.g. ``|0,1> + i|1,0>`` for the single-charge vortex.  ``ring`` uses the
    real symmetric combination ``|m,n> + |n,m>``, which for ``(0, 2)`` is the
    ring dark soliton.
    """

    m: int
    n: int
    vortex: bool = False
    ring: bool = False

    def __post_init__(self):
        if self.m < 0 or self.n < 0:
            raise ValueError("quantum numbers must be nonnegative")
        if self.vortex and self.ring:
            raise ValueError("a branch label cannot be both vortex and ring")

    def mu_crit(self, omega: float) -> float:
        return (self.m + self.n + 1) * omega

    @property
    def kind(self) -> str:
        return "vortex" if self.vortex else "ring" if self.ring else "real"

    def __str__(self) -> str:
        suffix = {"vortex": "v", "ring": "r", "real": ""}[self.kind]
        return f"|{self.m},{self.n}>{suffix}"

    @classmethod
    def parse(cls, text: str) -> "BranchLabel":
        """Parse ``"m,n"`` with optional ``v`` (vortex) or ``r`` (ring) suffix."""
        t = text.strip().strip("|>").strip()
        kind = ""
        if t and t[-1] in "vr":
            kind, t = t[-1], t[:-1].rstrip(">").strip()
        try:
            m, n = (int(s) for s in t.split(","))
        except ValueError:
            raise ValueError(f"malformed branch label {text!r}") from None
        return cls(m, n, vortex=kind == "v", ring=kind == "r")


#: The six branches of the first three bifurcation points.
SIX_BRANCHES = (
    BranchLabel(0, 0),
    BranchLabel(0, 1, vortex=True),
    BranchLabel(1, 0),
    BranchLabel(2, 0),
    BranchLabel(0, 2, ring=True),
    BranchLabel(1, 1),
)


@dataclass(frozen=True)
class Observables:
    n_bosons: float
    rho_inf: float


@dataclass
class State:
    """Full-layout (phi, psi) dof vector together with its parameters."""

    space: FeSpace
    values: np.ndarray
    mu: float
    omega: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.n_full,):
            raise ValueError(f"state vector must have length {self.space.n_full}")

    @classmethod
    def from_free(cls, space: FeSpace, x: np.ndarray, params: GpParameters) -> "State":
        return cls(space, space.to_full(x), params.mu, params.omega)

    @property
    def free(self) -> np.ndarray:
        return self.space.to_free(self.values)

    @property
    def params(self) -> GpParameters:
        return GpParameters(self.mu, self.omega)


def hermite_eval(j: int, x):
    """Physicists' Hermite polynomial ``H_j(x)`` by three-term recurrence."""
    if j < 0:
        raise ValueError("Hermite degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if j == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * x
    for k in range(1, j):
        h_prev, h = h, 2.0 * x * h - 2.0 * k * h_prev
    return h if h.ndim else float(h)


class GpProblem:
    """Residual, Jacobian and observables of the discrete GP problem.

    All methods act on *free*-layout vectors (interior dofs only).
    """

    def __init__(self, space: FeSpace):
        self.space = space
        self.A = space.matrix("A")
        self.B = space.matrix("B")
        self.M = space.matrix("M")
        self.K = space.matrix("K")
        self.assembler = NonlinearAssembler(space, free=True)
        self._a = self.assembler.pattern_data(self.A)
        self._b = self.assembler.pattern_data(self.B)
        self._m = self.assembler.pattern_data(self.M)
        asm = self.assembler
        rows = np.repeat(np.arange(asm.n), np.diff(asm.indptr))
        h = space.n_int
        self._coupling = (rows < h) != (asm.indices < h)

    @property
    def n(self) -> int:
        return self.space.n_free

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected free vector of length {self.n}, got shape {x.shape}")
        return x

    def linear_operator(self, params: GpParameters) -> sp.csr_matrix:
        return sp.csr_matrix(self.A + params.omega**2 * self.B - params.mu * self.M)

    def linear_part(self, x: np.ndarray, params: GpParameters) -> np.ndarray:
        return self.A @ x + params.omega**2 * (self.B @ x) - params.mu * (self.M @ x)

    def nonlinear_vector(self, x: np.ndarray) -> np.ndarray:
        return self.assembler.assemble(self._check(x), with_matrix=False)[1]

    def residual(self, x: np.ndarray, params: GpParameters) -> np.ndarray:
        x = self._check(x)
        return self.linear_part(x, params) + self.nonlinear_vector(x)

    def jacobian(self, x: np.ndarray, params: GpParameters) -> sp.csr_matrix:
        return self.residual_and_jacobian(x, params)[1]

    def residual_and_jacobian(self, x: np.ndarray, params: GpParameters):
        """One assembly pass producing ``G(x)`` and ``J(x) = A + Omega^2 B - mu M + C(x)``."""
        x = self._check(x)
        cdata, nvec = self.assembler.assemble(x)
        data = cdata + self._a + params.omega**2 * self._b - params.mu * self._m
        jac = self.assembler._matrix(data)
        res = self.linear_part(x, params) + nvec
        return res, jac

    def solve(self, J: sp.csr_matrix, G: np.ndarray) -> np.ndarray:
        """Linear solve that exploits a decoupled (phi, psi) Jacobian.

        For real states the phi/psi coupling block is exactly zero; the two
        blocks are then factorized separately and a zero right-hand side
        block yields an exactly zero update, which keeps ``psi = 0`` along
        real branches.
        """
        if J.shape != (self.n, self.n) or J.nnz != self._coupling.size or np.any(J.data[self._coupling]):
            return sparse_solve(J, G)
        h = self.space.n_int
        out = np.zeros(self.n)
        for sl in (slice(0, h), slice(h, self.n)):
            if np.any(G[sl]):
                out[sl] = sparse_solve(J[sl, sl], G[sl])
        return out

    def nonlinear_matrix(self, x: np.ndarray) -> sp.csr_matrix:
        cdata, _ = self.assembler.assemble(self._check(x))
        return self.assembler._matrix(cdata)

    # -- observables -----------------------------------------------------

    def observables(self, x: np.ndarray) -> Observables:
        x = np.asarray(x, dtype=float)
        if x.shape[0] == self.space.n_full:
            x = self.space.to_free(x)
        x = self._check(x)
        nb = float(x @ (self.M @ x))
        h = self.space.n_int
        rho = x[:h] ** 2 + x[h:] ** 2
        return Observables(n_bosons=max(nb, 0.0), rho_inf=float(rho.max()) if rho.size else 0.0)

    def norm(self, x: np.ndarray, kind: str = "L2") -> float:
        x = self._check(x)
        X = self.M if kind == "L2" else self.M + self.K if kind == "H1" else None
        if X is None:
            raise ValueError(f"unknown norm {kind!r}")
        return float(np.sqrt(max(x @ (X @ x), 0.0)))

    # -- initial guesses ---------------------------------------------------

    def hermite_mode(self, m: int, n: int, omega: float) -> np.ndarray:
        """Scalar nodal values of ``H_m(sqrt(W) x) H_n(sqrt(W) y) exp(-W r^2 / 2)``."""
        xy = self.space.dof_coords
        s = np.sqrt(omega)
        vals = hermite_eval(m, s * xy[:, 0]) * hermite_eval(n, s * xy[:, 1])
        vals = vals * np.exp(-0.5 * omega * (xy[:, 0] ** 2 + xy[:, 1] ** 2))
        vals[self.space.boundary_dofs] = 0.0
        return vals

    def hermite_guess(self, label: BranchLabel, params: GpParameters, amplitude: float = 1.0) -> np.ndarray:
        """Free-layout initial guess with L2 norm equal to ``amplitude``."""
        if not amplitude > 0:
            raise ValueError("guess amplitude must be positive")
        w = params.omega
        phi = self.hermite_mode(label.m, label.n, w)
        psi = np.zeros_like(phi)
        if label.vortex:
            psi = self.hermite_mode(label.n, label.m, w)
        elif label.ring:
            phi = phi + self.hermite_mode(label.n, label.m, w)
        x = self.space.to_free(np.concatenate([phi, psi]))
        nrm = self.norm(x, "L2")
        if nrm == 0.0:
            raise ValueError(f"Hermite guess for {label} vanishes on this mesh")
        return amplitude * x / nrm

    def quartic_moment(self, u: np.ndarray) -> float:
        """``int |u|^4``, the cubic self-interaction of a guess direction."""
        return float(u @ self.nonlinear_vector(u))


def rotate_phase(x: np.ndarray, theta: float) -> np.ndarray:
    """Global phase rotation ``(phi, psi) -> (phi cos - psi sin, phi sin + psi cos)``."""
    x = np.asarray(x, dtype=float)
    h = x.shape[0] // 2
    phi, psi = x[:h], x[h:]
    c, s = np.cos(theta), np.sin(theta)
    return np.concatenate([c * phi - s * psi, s * phi + c * psi])
