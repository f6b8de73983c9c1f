"""Branch tracing over a parameter grid.

A branch is followed in ``mu`` at fixed ``Omega``.  While the previous
solution is (numerically) zero the Hermite guess of the branch is used;
once a nontrivial solution is found it seeds the next grid point.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .newton import NewtonConfig, NewtonReport, SingularJacobian, newton_solve
from .problem import BranchLabel, GpParameters, GpProblem, Observables

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParameterGrid:
    mu: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        om = np.atleast_1d(np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "omega", om)
        if mu.size == 0:
            raise ValueError("empty mu grid")
        if om.size == 0:
            raise ValueError("empty Omega grid")
        for name, v in (("mu", mu), ("Omega", om)):
            if v.size > 1:
                d = np.diff(v)
                if np.any(d <= 0):
                    raise ValueError(f"{name} grid must be strictly increasing")
                if np.max(np.abs(d - d[0])) > 1e-12 * max(1.0, np.abs(v).max()):
                    raise ValueError(f"{name} grid must be uniformly spaced")
        if np.any(om <= 0):
            raise ValueError("trap strengths must be positive")

    @classmethod
    def uniform(cls, mu_min: float, mu_max: float, dmu: float, omegas=(0.2,)) -> "ParameterGrid":
        k = int(round((mu_max - mu_min) / dmu))
        if k < 0 or abs(mu_min + k * dmu - mu_max) > 1e-9 * max(1.0, abs(mu_max)):
            raise ValueError("mu range is not an integer multiple of the step")
        return cls(np.linspace(mu_min, mu_max, k + 1), np.asarray(omegas, dtype=float))

    @property
    def dmu(self) -> float:
        return float(self.mu[1] - self.mu[0]) if self.mu.size > 1 else 0.0


@dataclass(frozen=True)
class ContinuationConfig:
    """Guess policy and tolerances for :func:`trace_branch`.

    ``guess_rule`` selects how the Hermite guess is scaled:

    * ``"fixed"``: L2 norm ``guess_amplitude`` (or the per-branch value in
      ``amplitudes``, keyed by ``str(label)``);
    * ``"linear-limit"``: the small-amplitude estimate
      ``sqrt((mu - mu_crit) / int |u|^4)`` of the bifurcated solution along
      the unit guess ``u``, but never below ``guess_floor``.  Below
      ``mu_crit`` the guess is then tiny and Newton returns to zero without
      being pulled onto a lower branch of the same symmetry.
    """

    eps_bif: float = 1e-4
    guess_amplitude: float = 1.0
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    norm_kind: str = "L2"
    amplitudes: dict = field(default_factory=dict)
    guess_rule: str = "linear-limit"
    guess_floor: float = 1e-3

    def __post_init__(self):
        if not self.eps_bif > 0:
            raise ValueError("eps_bif must be positive")
        if self.norm_kind not in ("L2", "H1"):
            raise ValueError(f"unknown norm {self.norm_kind!r}")
        if self.guess_rule not in ("fixed", "linear-limit"):
            raise ValueError(f"unknown guess rule {self.guess_rule!r}")
        if not self.guess_floor > 0 or not self.guess_amplitude > 0:
            raise ValueError("guess amplitudes must be positive")

    def amplitude(self, label: BranchLabel, params: GpParameters, quartic: float) -> float:
        if self.guess_rule == "fixed":
            return float(self.amplitudes.get(str(label), self.guess_amplitude))
        excess = max(params.mu - label.mu_crit(params.omega), 0.0)
        return max(float(np.sqrt(excess / quartic)), self.guess_floor)


@dataclass
class BranchRecord:
    mu: float
    omega: float
    n_bosons: float
    rho_inf: float
    newton_iters: int
    converged: bool


@dataclass
class BranchCurve:
    label: BranchLabel
    omega: float
    records: list[BranchRecord] = field(default_factory=list)
    first_nontrivial_mu: float | None = None
    states: list | None = None  # solver-native solutions, when kept
    newton_reports: list[NewtonReport] = field(default_factory=list, repr=False)

    @property
    def mu(self) -> np.ndarray:
        return np.array([r.mu for r in self.records])

    @property
    def n_bosons(self) -> np.ndarray:
        return np.array([r.n_bosons for r in self.records])

    @property
    def rho_inf(self) -> np.ndarray:
        return np.array([r.rho_inf for r in self.records])

    @property
    def converged(self) -> np.ndarray:
        return np.array([r.converged for r in self.records], dtype=bool)


class FullOrderBackend:
    """Finite element solver with the backend interface used by :func:`trace_branch`.

    Backend interface: ``guess_direction``, ``solve``, ``norm``,
    ``observables`` and ``to_full_order`` (native vector to free-layout FE
    vector).
    """

    def __init__(self, problem: GpProblem):
        self.problem = problem
        self._guesses = {}

    def guess_direction(self, label: BranchLabel, omega: float):
        """Unit-L2 Hermite guess and its quartic moment ``int |u|^4``."""
        key = (label, omega)
        if key not in self._guesses:
            u = self.problem.hermite_guess(label, GpParameters(0.0, omega), 1.0)
            self._guesses[key] = (u, self.problem.quartic_moment(u))
        return self._guesses[key]

    def solve(self, x0: np.ndarray, params: GpParameters, cfg: NewtonConfig):
        return newton_solve(x0, _FomProvider(self.problem, params), cfg)

    def norm(self, x: np.ndarray, kind: str = "L2") -> float:
        return self.problem.norm(x, kind)

    def observables(self, x: np.ndarray) -> Observables:
        return self.problem.observables(x)

    def to_full_order(self, x: np.ndarray) -> np.ndarray:
        return x


class _FomProvider:
    def __init__(self, problem: GpProblem, params: GpParameters):
        self.problem = problem
        self.params = params

    def residual(self, x):
        return self.problem.residual(x, self.params)

    def jacobian(self, x):
        return self.problem.jacobian(x, self.params)

    def residual_and_jacobian(self, x):
        return self.problem.residual_and_jacobian(x, self.params)

    def solve(self, J, G):
        return self.problem.solve(J, G)


def detect_bifurcated(x: np.ndarray, backend, cfg: ContinuationConfig) -> bool:
    """True when the solution norm reaches ``eps_bif`` (``>=`` convention)."""
    return backend.norm(x, cfg.norm_kind) >= cfg.eps_bif


def trace_branch(
    label: BranchLabel,
    grid: ParameterGrid,
    backend,
    cfg: ContinuationConfig = ContinuationConfig(),
    omega: float | None = None,
    keep_states: bool = False,
) -> BranchCurve:
    """Follow one branch across ``grid.mu`` at a single trap strength.

    Non-convergence (or a singular Jacobian) at a grid point is recorded and
    the next point restarts from the Hermite guess.
    """
    if omega is None:
        if grid.omega.size != 1:
            raise ValueError("grid has several trap strengths; pass omega or use trace_diagram")
        omega = float(grid.omega[0])
    curve = BranchCurve(label=label, omega=omega, states=[] if keep_states else None)
    prev = None
    for mu in grid.mu:
        params = GpParameters(float(mu), omega)
        if prev is None or not detect_bifurcated(prev, backend, cfg):
            u, quartic = backend.guess_direction(label, omega)
            x0 = cfg.amplitude(label, params, quartic) * u
        else:
            x0 = prev
        try:
            x, report = backend.solve(x0, params, cfg.newton)
        except SingularJacobian as exc:
            log.info("%s mu=%.6g: %s", label, mu, exc)
            x, report = None, NewtonReport(converged=False, iterations=0)
        curve.newton_reports.append(report)
        if not report.converged:
            obs = backend.observables(x) if x is not None and np.all(np.isfinite(x)) else None
            curve.records.append(
                BranchRecord(float(mu), omega, obs.n_bosons if obs else np.nan, obs.rho_inf if obs else np.nan,
                             report.iterations, False)
            )
            if keep_states:
                curve.states.append(None)
            prev = None
            continue
        if detect_bifurcated(x, backend, cfg):
            obs = backend.observables(x)
            if curve.first_nontrivial_mu is None:
                curve.first_nontrivial_mu = float(mu)
        else:
            obs = Observables(0.0, 0.0)
        curve.records.append(BranchRecord(float(mu), omega, obs.n_bosons, obs.rho_inf, report.iterations, True))
        if keep_states:
            curve.states.append(x)
        prev = x
    return curve


def trace_diagram(labels, grid: ParameterGrid, backend, cfg: ContinuationConfig = ContinuationConfig(),
                  keep_states: bool = False, workers: int = 1) -> list[BranchCurve]:
    """Trace every label at every trap strength (outer loop over Omega)."""
    labels = list(labels)
    if not labels:
        raise ValueError("no branch labels given")
    jobs = [(lab, float(om)) for om in grid.omega for lab in labels]
    run = lambda job: trace_branch(job[0], grid, backend, cfg, omega=job[1], keep_states=keep_states)
    if workers <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))
