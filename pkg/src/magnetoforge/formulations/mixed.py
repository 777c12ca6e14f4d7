"""Mixed flux/potential formulation: b in discontinuous P_{p-1}^3, psi in
continuous P_p with zero mean.

The Newton system is a saddle point problem whose flux block A is block
diagonal (one dense SPD block per element).  It is solved by forming the
Schur complement S = B A^-1 B^T, a weighted Laplacian on the psi space,
and recovering db element by element.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..femcore import vector_l2_basis
from ..solver import SolverError, pcg_deflated
from .common import Discretization, FieldState, assemble_matrix, assemble_vector

# max |B db - g| allowed before a refinement solve, relative to the smaller
# of |db|_2 and the row scale max(|B| |db|) used by ``feasibility``
CONSTRAINT_TOL = 1e-11
MAX_REFINEMENTS = 5
# iterates with |B b| below this (relative to |B| |b|) count as feasible; it
# sits above what refined increments leave behind, so round-off is never
# "restored" by a step that raises the energy
FEASIBLE_TOL = 1e-10


@dataclass
class SaddleOperator:
    A: np.ndarray  # (T, nb, nb)
    chol: np.ndarray  # lower Cholesky factors of A
    Ainv: np.ndarray
    B_local: np.ndarray  # (T, n_psi_local, nb)
    B: sp.csr_matrix  # (n_psi, T * nb)
    cells: np.ndarray  # Lagrange dofs per element

    def apply_Ainv(self, v: np.ndarray) -> np.ndarray:
        return np.einsum("tij,tj->ti", self.Ainv, v)

    def dense(self) -> np.ndarray:
        """Full saddle matrix [[A, B^T], [B, 0]] (small meshes only)."""
        A = sp.block_diag(list(self.A)).toarray()
        Bd = self.B.toarray()
        n_psi = Bd.shape[0]
        return np.block([[A, Bd.T], [Bd, np.zeros((n_psi, n_psi))]])


@dataclass
class SchurSystem:
    S: sp.csr_matrix
    rhs: np.ndarray
    deflation: np.ndarray


class MixedFormulation:
    name = "mixed"

    def __init__(self, disc: Discretization):
        self.disc = disc
        self.beta = vector_l2_basis(disc.p - 1, disc.rule.points)  # (Q, nb, 3)
        self.nb = self.beta.shape[1]
        self.T = disc.mesh.n_tets
        self.n_b = self.T * self.nb
        self.n_psi = disc.lagrange.n_dofs

    @property
    def dofs(self) -> dict:
        return {"b": self.n_b, "psi": self.n_psi, "total": self.n_b + self.n_psi}

    @property
    def n_unknowns(self) -> int:
        return self.n_b + self.n_psi

    @cached_property
    def B_local(self) -> np.ndarray:
        d = self.disc
        return np.einsum("tq,tqki,qji->tkj", d.weights, d.grad_phi, self.beta)

    @cached_property
    def B(self) -> sp.csr_matrix:
        cells = self.disc.lagrange.cell_dofs
        nl = cells.shape[1]
        rows = np.repeat(cells, self.nb, axis=1).ravel()
        cols = np.tile(np.arange(self.n_b).reshape(self.T, self.nb), (1, nl)).ravel()
        return sp.csr_matrix((self.B_local.ravel(), (rows, cols)), shape=(self.n_psi, self.n_b))

    @cached_property
    def B_abs(self) -> sp.csr_matrix:
        return abs(self.B)

    # -- state handling ---------------------------------------------------
    def initial_state(self) -> np.ndarray:
        """b = 0 and the gauge-consistent psi."""
        return self.join(np.zeros((self.T, self.nb)), self.disc.initial_psi())

    def split(self, x):
        return x[:self.n_b].reshape(self.T, self.nb), x[self.n_b:]

    def join(self, b, psi):
        return np.concatenate([np.ravel(b), psi])

    def state(self, x) -> FieldState:
        b, psi = self.split(x)
        return FieldState("mixed", b=b.copy(), psi=psi.copy())

    def b_at_points(self, bc: np.ndarray) -> np.ndarray:
        return np.einsum("qki,tk->tqi", self.beta, bc)

    # -- forms ---------------------------------------------------------------
    def residual_parts(self, x):
        """(f, g): f = -<dw(b) + grad psi - hs, b'>, g = -<b, grad psi'>."""
        d = self.disc
        bc, psi = self.split(x)
        _, h, _ = d.energy_law_eval(self.b_at_points(bc))
        f = -np.einsum("tq,tqi,qki->tk", d.weights, h - d.hs, self.beta)
        f -= (self.B.T @ psi).reshape(self.T, self.nb)
        g = -(self.B @ bc.ravel())
        return f, g

    def residual(self, x) -> np.ndarray:
        f, g = self.residual_parts(x)
        return np.concatenate([f.ravel(), g])

    def energy(self, x) -> float:
        d = self.disc
        bc, _ = self.split(x)
        bq = self.b_at_points(bc)
        w, _, _ = d.energy_law_eval(bq)
        return float((d.weights * (w - np.einsum("tqi,tqi->tq", d.hs, bq))).sum())

    def energy_gradient(self, x) -> np.ndarray:
        d = self.disc
        bc, _ = self.split(x)
        _, h, _ = d.energy_law_eval(self.b_at_points(bc))
        return np.einsum("tq,tqi,qki->tk", d.weights, h - d.hs, self.beta)

    def jacobian(self, x) -> SaddleOperator:
        d = self.disc
        bc, _ = self.split(x)
        _, _, H = d.energy_law_eval(self.b_at_points(bc))
        A = np.einsum("tq,qki,tqij,qlj->tkl", d.weights, self.beta, H, self.beta)
        A = 0.5 * (A + A.transpose(0, 2, 1))
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise SolverError("flux block is not positive definite (material law violates monotonicity)") from None
        Linv = np.linalg.inv(L)
        Ainv = np.einsum("tki,tkj->tij", Linv, Linv)
        return SaddleOperator(A=A, chol=L, Ainv=Ainv, B_local=self.B_local, B=self.B,
                              cells=d.lagrange.cell_dofs)

    # -- Schur complement -----------------------------------------------------
    def schur_reduce(self, op: SaddleOperator, f: np.ndarray, g: np.ndarray) -> SchurSystem:
        S_loc = np.einsum("tki,tij,tlj->tkl", op.B_local, op.Ainv, op.B_local)
        S = assemble_matrix(op.cells, S_loc, self.n_psi)
        Af = op.apply_Ainv(f)
        rhs = assemble_vector(op.cells, np.einsum("tki,ti->tk", op.B_local, Af), self.n_psi) - g
        return SchurSystem(S=S, rhs=rhs, deflation=self.disc.lagrange.constant)

    def recover_db(self, op: SaddleOperator, f: np.ndarray, dpsi: np.ndarray) -> np.ndarray:
        return op.apply_Ainv(f - np.einsum("tki,tk->ti", op.B_local, dpsi[op.cells]))

    def direction(self, x, config):
        op = self.jacobian(x)
        f, g = self.residual_parts(x)
        if self.feasibility(self.split(x)[0]) <= FEASIBLE_TOL:
            # feasible iterate: g is round-off, and keeping it would make the
            # increment chase that noise instead of staying in ker B
            g = np.zeros_like(g)
        sys = self.schur_reduce(op, f, g)
        dpsi, its, relres = pcg_deflated(sys.S, sys.rhs, deflation=sys.deflation,
                                         tol=config.cg_tol_rel, max_iter=config.cg_max_iter)
        db = self.recover_db(op, f, dpsi)
        # B db - g equals the Schur residual, so CG round-off shows up as a
        # constraint defect; refine on that defect until it is negligible
        refinements = 0
        for refinements in range(MAX_REFINEMENTS + 1):
            defect = self.B @ db.ravel() - g
            target = CONSTRAINT_TOL * min(np.linalg.norm(db), np.max(self.B_abs @ np.abs(db.ravel())))
            if np.max(np.abs(defect)) <= target or refinements == MAX_REFINEMENTS:
                break
            tol = min(0.5, max(config.cg_tol_rel, target / np.linalg.norm(defect)))
            e, k, _ = pcg_deflated(sys.S, defect, deflation=sys.deflation, tol=tol, max_iter=config.cg_max_iter)
            its += k
            dpsi = dpsi + e
            db = db - op.apply_Ainv(np.einsum("tki,tk->ti", op.B_local, e[op.cells]))
        return self.join(db, dpsi), {"cg_iterations": its, "cg_rel_residual": relres,
                                     "refinements": refinements}

    def slope(self, x, dx) -> float:
        """Derivative of the Lagrangian along db.

        Equal to that of J when B db = 0, but free of the psi . B db
        round-off that dominates the energy gradient near convergence.
        """
        f, _ = self.residual_parts(x)
        db, _ = self.split(dx)
        return -float(np.sum(f * db))

    def update(self, x, dx, tau):
        b, psi = self.split(x + tau * dx)
        return self.join(b, self.disc.zero_mean(psi))

    def feasibility(self, bc) -> float:
        """|B b|_inf relative to the size of the summed terms."""
        bc = np.ravel(bc)
        scale = np.max(self.B_abs @ np.abs(bc)) if bc.any() else 1.0
        return float(np.max(np.abs(self.B @ bc)) / scale)

    def diagnostics(self, x, dx) -> dict:
        bc, _ = self.split(x)
        db, _ = self.split(dx)
        nrm = np.linalg.norm(db)
        step = float(np.max(np.abs(self.B @ db.ravel())) / nrm) if nrm > 0 else 0.0
        return {"feasibility": self.feasibility(bc), "constraint_step": step}

    # -- post-processing -------------------------------------------------------
    def b_field(self, x) -> np.ndarray:
        return self.b_at_points(self.split(x)[0])

    def h_field(self, x) -> np.ndarray:
        """h = hs - grad psi at the quadrature points."""
        return self.disc.hs - self.disc.grad_psi(self.split(x)[1])
