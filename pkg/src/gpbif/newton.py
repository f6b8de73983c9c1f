"""Newton-Kantorovich iteration and the linear solves behind it."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SingularMatrix(ArithmeticError):
    """The linear system could not be factorized."""


class SingularJacobian(SingularMatrix):
    """Raised by :func:`newton_solve` when a Jacobian factorization fails."""


@dataclass(frozen=True)
class NewtonConfig:
    tol_residual: float = 1e-10
    max_iter: int = 25
    damping: float = 1.0
    # "residual": stop when ||G|| <= tol (default); "step": stop when ||dX|| <= tol
    criterion: str = "residual"

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.criterion not in ("residual", "step"):
            raise ValueError(f"unknown stopping criterion {self.criterion!r}")


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    step_history: list[float] = field(default_factory=list)


def sparse_solve(A, b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Direct solve of ``A x = b`` for sparse or dense square ``A``.

    One or two steps of iterative refinement are applied if the relative
    residual misses ``rtol``; a failed factorization raises
    :class:`SingularMatrix`.
    """
    b = np.asarray(b, dtype=float)
    n, m = A.shape
    if n != m:
        raise ValueError("matrix must be square")
    if b.shape[0] != n:
        raise ValueError(f"right-hand side has length {b.shape[0]}, expected {n}")
    if sp.issparse(A):
        A = sp.csc_matrix(A)
        try:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:  # "Factor is exactly singular"
            raise SingularMatrix(str(exc)) from None
        solve = lu.solve
        diag = np.abs(lu.U.diagonal())
    else:
        A = np.asarray(A, dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                lu_piv = sla.lu_factor(A, check_finite=False)
            except (sla.LinAlgWarning, ValueError) as exc:
                raise SingularMatrix(str(exc)) from None
        solve = lambda r: sla.lu_solve(lu_piv, r, check_finite=False)
        diag = np.abs(np.diag(lu_piv[0]))
    scale = diag.max() if diag.size else 0.0
    if scale == 0.0 or diag.min() <= n * np.finfo(float).eps * scale:
        raise SingularMatrix("matrix is numerically singular")
    x = solve(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    for _ in range(2):
        r = b - A @ x
        if np.linalg.norm(r) <= rtol * bnorm:
            break
        x = x + solve(r)
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("solve produced non-finite values")
    return x


def newton_solve(x0: np.ndarray, provider, cfg: NewtonConfig = NewtonConfig()):
    """Newton iteration ``J(x_k) dx = G(x_k)``, ``x_{k+1} = x_k - dx``.

    ``provider`` supplies ``residual(x)`` and ``jacobian(x)``; when it also
    has ``residual_and_jacobian(x)`` that is used to share one assembly, and
    a ``solve(J, G)`` method, if present, replaces :func:`sparse_solve`.

    Returns the last iterate and a :class:`NewtonReport`.  Exhausting
    ``max_iter`` is not an error (``converged`` is False).
    """
    x = np.array(x0, dtype=float, copy=True)
    both = getattr(provider, "residual_and_jacobian", None)
    linsolve = getattr(provider, "solve", sparse_solve)
    report = NewtonReport(converged=False, iterations=0)

    def evaluate(x):
        if both is not None:
            return both(x)
        return provider.residual(x), provider.jacobian(x)

    G, J = evaluate(x)
    rnorm = float(np.linalg.norm(G))
    report.residual_history.append(rnorm)
    if cfg.criterion == "residual" and rnorm <= cfg.tol_residual:
        report.converged = True
        return x, report
    if cfg.criterion == "step" and rnorm == 0.0:
        report.converged = True
        return x, report
    for k in range(cfg.max_iter):
        if not np.isfinite(rnorm):
            break
        try:
            dx = linsolve(J, G)
        except SingularMatrix as exc:
            raise SingularJacobian(f"Jacobian singular at Newton iteration {k}: {exc}") from None
        x -= cfg.damping * dx
        snorm = float(np.linalg.norm(dx))
        report.step_history.append(snorm)
        report.iterations = k + 1
        G, J = evaluate(x)
        rnorm = float(np.linalg.norm(G))
        report.residual_history.append(rnorm)
        if cfg.criterion == "residual" and rnorm <= cfg.tol_residual:
            report.converged = True
            break
        if cfg.criterion == "step" and snorm <= cfg.tol_residual:
            report.converged = True
            break
    if not report.converged:
        log.debug("Newton stopped after %d iterations, residual %.3e", report.iterations, rnorm)
    return x, report
