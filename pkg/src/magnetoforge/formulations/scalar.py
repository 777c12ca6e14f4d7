"""Reduced scalar potential formulation driven by the coenergy w*(h),
h = hs - grad psi, psi in continuous P_p with zero mean."""
from __future__ import annotations

import numpy as np

from ..solver import pcg_deflated
from .common import Discretization, FieldState, assemble_matrix, assemble_vector


class ScalarFormulation:
    name = "scalar"

    def __init__(self, disc: Discretization):
        self.disc = disc
        self.n_psi = disc.lagrange.n_dofs

    @property
    def dofs(self) -> dict:
        return {"psi": self.n_psi, "total": self.n_psi}

    @property
    def n_unknowns(self) -> int:
        return self.n_psi

    def initial_state(self):
        return self.disc.initial_psi()

    def state(self, x) -> FieldState:
        return FieldState("scalar", psi=x.copy())

    def h_field(self, x) -> np.ndarray:
        return self.disc.hs - self.disc.grad_psi(x)

    def residual_jacobian(self, x, with_jacobian: bool = True):
        """r = <dw*(h), grad psi'> (minus the energy gradient) and the
        stiffness K = <d2w*(h) grad dpsi, grad psi'>."""
        d = self.disc
        _, b, Hs = d.coenergy_law_eval(self.h_field(x))
        cells = d.lagrange.cell_dofs
        r = assemble_vector(cells, np.einsum("tq,tqi,tqki->tk", d.weights, b, d.grad_phi), self.n_psi)
        if not with_jacobian:
            return r, None
        K_loc = np.einsum("tq,tqki,tqij,tqlj->tkl", d.weights, d.grad_phi, Hs, d.grad_phi)
        K_loc = 0.5 * (K_loc + K_loc.transpose(0, 2, 1))
        return r, assemble_matrix(cells, K_loc, self.n_psi)

    def residual(self, x):
        return self.residual_jacobian(x, with_jacobian=False)[0]

    def energy(self, x) -> float:
        d = self.disc
        ws, _, _ = d.coenergy_law_eval(self.h_field(x))
        return float((d.weights * ws).sum())

    def direction(self, x, config):
        r, K = self.residual_jacobian(x)
        dpsi, its, relres = pcg_deflated(K, r, deflation=self.disc.lagrange.constant,
                                         tol=config.cg_tol_rel, max_iter=config.cg_max_iter)
        return dpsi, {"cg_iterations": its, "cg_rel_residual": relres}

    def slope(self, x, dx) -> float:
        return -float(self.residual(x) @ dx)

    def update(self, x, dx, tau):
        return self.disc.zero_mean(x + tau * dx)

    def b_field(self, x) -> np.ndarray:
        _, b, _ = self.disc.coenergy_law_eval(self.h_field(x))
        return b
