"""Newton iteration with Armijo backtracking on the discrete energy, and the
deflated Jacobi-preconditioned conjugate gradient method used for every
linear solve.

``newton_solve`` is formulation agnostic.  A problem object supplies

* ``initial_state()``        starting coefficient vector
* ``residual(x)``            right-hand side of the Newton system (minus the
                             energy gradient, plus constraint residuals)
* ``energy(x)``              merit function minimized by the line search
* ``direction(x, config)``   Newton increment and a dict of linear-solve stats
* ``slope(x, d)``            directional derivative of the energy
* ``update(x, d, tau)``      new iterate (may renormalize, e.g. zero mean)
* ``diagnostics(x, d)``      optional extra per-iteration fields
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


# |slope| below this fraction of |r| |d| counts as a flat direction
FLAT_SLOPE = 1e-12


class SolverError(RuntimeError):
    pass


class LinearSolverError(SolverError):
    pass


class LineSearchError(SolverError):
    pass


class NewtonError(SolverError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class NewtonConfig:
    tol_rel: float = 1e-8
    tol_abs: float = 1e-12
    max_iter: int = 50
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    cg_tol_rel: float = 1e-10
    cg_max_iter: int | None = None  # default 10 * #unknowns
    energy_slack: float = 1e-14

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if min(self.tol_rel, self.tol_abs, self.cg_tol_rel) <= 0:
            raise ValueError("tolerances must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "NewtonConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown solver option(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class IterationRecord:
    iteration: int
    residual: float
    energy: float
    step: float
    backtracks: int
    energy_new: float
    cg_iterations: int
    cg_rel_residual: float
    extra: dict = field(default_factory=dict)


@dataclass
class SolveReport:
    formulation: str
    status: str = "running"
    iterations: int = 0
    initial_residual: float = float("nan")
    final_residual: float = float("nan")
    final_energy: float = float("nan")
    records: list = field(default_factory=list)
    dofs: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def cg_total(self) -> int:
        return sum(r.cg_iterations for r in self.records)

    @property
    def energies(self) -> list:
        return [self.records[0].energy] + [r.energy_new for r in self.records] if self.records else []

    def to_dict(self) -> dict:
        d = asdict(self)
        d["newton_iterations"] = self.iterations
        d["cg_total"] = self.cg_total
        return d


def _jacobi(S):
    diag = np.asarray(S.diagonal(), dtype=float)
    if np.any(diag <= 0):
        raise LinearSolverError("Jacobi preconditioner needs a positive diagonal")
    return 1.0 / diag


def pcg_deflated(S, rhs, precond="jacobi", deflation=None, tol: float = 1e-10,
                 max_iter: int | None = None, x0=None):
    """Preconditioned CG on the complement of ``deflation``.

    Returns (x, iterations, relative residual).  With a deflation vector z
    the right-hand side is projected onto z-perp and the iterate stays
    orthogonal to z, so S only needs to be positive definite there.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = len(rhs)
    if max_iter is None:
        max_iter = 10 * n
    if precond == "jacobi":
        minv = _jacobi(S)
    elif precond is None:
        minv = np.ones(n)
    else:
        minv = np.asarray(precond, dtype=float)

    if deflation is not None:
        z = np.asarray(deflation, dtype=float)
        zz = z @ z

        def proj(v):
            return v - z * ((z @ v) / zz)
    else:
        def proj(v):
            return v

    b = proj(rhs)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else proj(np.asarray(x0, dtype=float).copy())
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b - proj(S @ x) if x0 is not None else b.copy()
    zk = proj(minv * r)
    p = zk.copy()
    rz = r @ zk
    it = 0
    rnorm = np.linalg.norm(r)
    while rnorm > tol * bnorm:
        if it >= max_iter:
            raise LinearSolverError(f"CG did not reach {tol:g} in {max_iter} iterations "
                                    f"(relative residual {rnorm / bnorm:.3e})")
        Sp = S @ p
        curv = p @ Sp
        if not curv > 0:
            raise LinearSolverError("CG breakdown: operator is not positive definite")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * proj(Sp)
        it += 1
        rnorm = np.linalg.norm(r)
        zk = proj(minv * r)
        rz_new = r @ zk
        p = zk + (rz_new / rz) * p
        rz = rz_new
    true_res = np.linalg.norm(b - proj(S @ x)) / bnorm
    return x, it, float(true_res)


def armijo_search(energy, x, direction, slope: float, config: NewtonConfig, J0: float | None = None):
    """Backtracking on tau in {1, rho, rho^2, ...}.

    Returns (tau, backtracks, J(x + tau d)).  A relative slack of
    ``config.energy_slack`` absorbs round-off once the predicted decrease
    drops below the resolution of J.
    """
    if not slope < 0:
        raise LineSearchError(f"not a descent direction (slope={slope:g})")
    if J0 is None:
        J0 = energy(x)
    slack = config.energy_slack * max(abs(J0), np.finfo(float).tiny)
    tau = 1.0
    for k in range(config.max_backtracks + 1):
        J = energy(x + tau * direction)
        if np.isfinite(J) and J <= J0 + config.armijo_c * tau * slope + slack:
            return tau, k, float(J)
        tau *= config.backtrack_factor
    raise LineSearchError(f"no sufficient decrease after {config.max_backtracks} backtracks")


def newton_solve(problem, config: NewtonConfig | None = None, x0=None, name: str | None = None):
    """Globalized Newton method; returns (x, SolveReport).

    At least one Newton step is always taken; convergence is checked on
    the residual after every step:  |r_k| <= tol_rel * |r_0| + tol_abs.
    """
    config = config or NewtonConfig()
    x = problem.initial_state() if x0 is None else np.asarray(x0, dtype=float).copy()
    report = SolveReport(formulation=name or getattr(problem, "name", "?"),
                         dofs=dict(getattr(problem, "dofs", {})))
    r = problem.residual(x)
    rnorm = r0 = float(np.linalg.norm(r))
    J = float(problem.energy(x))
    report.initial_residual = r0

    def done(k):
        return k > 0 and rnorm <= config.tol_rel * r0 + config.tol_abs

    k = 0
    while not done(k):
        if k >= config.max_iter:
            report.status = "max-iter"
            report.iterations, report.final_residual, report.final_energy = k, rnorm, J
            raise NewtonError(f"{report.formulation}: no convergence in {k} Newton steps", report)
        d, info = problem.direction(x, config)
        slope = float(problem.slope(x, d)) if np.any(d) else 0.0
        if abs(slope) <= FLAT_SLOPE * rnorm * np.linalg.norm(d):
            # J is flat along d up to round-off (e.g. a pure potential update)
            tau, nbt, Jn = 1.0, 0, float(problem.energy(problem.update(x, d, 1.0)))
        else:
            try:
                tau, nbt, Jn = armijo_search(problem.energy, x, d, slope, config, J0=J)
            except LineSearchError as exc:
                report.status = "line-search-failure"
                report.iterations, report.final_residual, report.final_energy = k, rnorm, J
                raise NewtonError(f"{report.formulation}: {exc}", report) from exc
        extra = problem.diagnostics(x, d) if hasattr(problem, "diagnostics") else {}
        x = problem.update(x, d, tau)
        report.records.append(IterationRecord(
            iteration=k + 1, residual=rnorm, energy=J, step=tau, backtracks=nbt, energy_new=Jn,
            cg_iterations=int(info.get("cg_iterations", 0)),
            cg_rel_residual=float(info.get("cg_rel_residual", 0.0)), extra=extra))
        logger.debug("%s it=%d |r|=%.3e J=%.10e tau=%g cg=%s", report.formulation, k + 1,
                     rnorm, J, tau, info.get("cg_iterations"))
        r = problem.residual(x)
        rnorm = float(np.linalg.norm(r))
        J = Jn
        k += 1
    report.status = "converged"
    report.iterations = k
    report.final_residual = rnorm
    report.final_energy = float(problem.energy(x))
    return x, report
