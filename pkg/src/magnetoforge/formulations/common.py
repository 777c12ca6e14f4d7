"""Quadrature-level data shared by all formulations, plus sparse assembly
helpers and the coefficient container ``FieldState``."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..femcore import assembly_degree, build_dofmap, lagrange_basis, quadrature_tet
from ..material import EnergyLaw
from ..mesh import Mesh
from ..sources import SourceField

_MIN_CHUNK = 2048


class ConfigurationError(ValueError):
    pass


def assembly_threads() -> int:
    try:
        return max(1, int(os.environ.get("MAGNETOFORGE_THREADS", "1")))
    except ValueError:
        return 1


def map_elements(fn, n: int, *arrays):
    """Apply ``fn`` to element-wise chunks of ``arrays`` and concatenate.

    Chunks run on a thread pool capped by MAGNETOFORGE_THREADS; results are
    joined in element order, so the outcome does not depend on the thread
    count.
    """
    threads = assembly_threads()
    if threads == 1 or n < 2 * _MIN_CHUNK:
        return fn(*arrays)
    bounds = np.linspace(0, n, min(threads, n // _MIN_CHUNK) + 1).astype(int)
    parts = [tuple(a[i:j] for a in arrays) for i, j in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(threads) as pool:
        out = list(pool.map(lambda args: fn(*args), parts))
    if isinstance(out[0], tuple):
        return tuple(np.concatenate(z) for z in zip(*out))
    return np.concatenate(out)


def assemble_matrix(cells: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    nl = cells.shape[1]
    rows = np.repeat(cells, nl, axis=1).ravel()
    cols = np.tile(cells, (1, nl)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_vector(cells: np.ndarray, local: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(cells.ravel(), weights=local.ravel(), minlength=n)


@dataclass
class FieldState:
    """Coefficient vectors of a discrete solution."""

    kind: str  # "mixed" | "scalar" | "vector"
    b: np.ndarray | None = None
    psi: np.ndarray | None = None
    a: np.ndarray | None = None


class Discretization:
    """Mesh, degree, quadrature and per-region laws for one problem.

    Quadrature weights include the element Jacobian determinant, so
    ``(W * f).sum()`` is the discrete integral of f.
    """

    def __init__(self, mesh: Mesh, p: int, laws: dict, source: SourceField, quad_degree: int | None = None):
        if p not in (1, 2):
            raise ConfigurationError(f"polynomial degree p={p} not supported (1 or 2)")
        missing = [t for t in mesh.regions if t not in laws]
        if missing:
            raise ConfigurationError(f"no material bound to region tag(s) {missing}")
        self.mesh = mesh
        self.p = p
        self.laws: dict[int, EnergyLaw] = dict(laws)
        self.source = source
        self.quad_degree = assembly_degree(p) if quad_degree is None else quad_degree
        if self.quad_degree < 2 * p - 2:
            raise ConfigurationError("quadrature degree below 2p - 2")
        self.rule = quadrature_tet(self.quad_degree)
        self.groups = {t: np.nonzero(mesh.tet_tags == t)[0] for t in mesh.regions}

    @cached_property
    def points(self) -> np.ndarray:
        m = self.mesh
        x0 = m.vertices[m.tets[:, 0]]
        return x0[:, None, :] + np.einsum("tij,qj->tqi", m.jacobians, self.rule.points)

    @cached_property
    def weights(self) -> np.ndarray:
        return self.mesh.dets[:, None] * self.rule.weights[None, :]

    @cached_property
    def hs(self) -> np.ndarray:
        return self.source.evaluate(self.points)

    @cached_property
    def lagrange(self):
        return build_dofmap(self.mesh, "lagrange", self.p)

    @cached_property
    def grad_phi(self) -> np.ndarray:
        """Physical gradients of the Lagrange basis, (T, Q, n_local, 3)."""
        _, ref = lagrange_basis(self.p, self.rule.points)
        return np.einsum("tij,qkj->tqki", self.mesh.inv_t, ref)

    @cached_property
    def mean_weights(self) -> np.ndarray:
        """Vector m with m @ psi = integral mean of the Lagrange function psi."""
        vals, _ = lagrange_basis(self.p, self.rule.points)
        loc = np.einsum("tq,qk->tk", self.weights, vals)
        m = assemble_vector(self.lagrange.cell_dofs, loc, self.lagrange.n_dofs)
        return m / self.weights.sum()

    @cached_property
    def lagrange_nodes(self) -> np.ndarray:
        """Coordinates of the Lagrange nodes: vertices, then edge midpoints for p = 2."""
        m = self.mesh
        if self.p == 1:
            return m.vertices
        E = m.edge_table.edges
        return np.vstack([m.vertices, 0.5 * (m.vertices[E[:, 0]] + m.vertices[E[:, 1]])])

    def initial_psi(self) -> np.ndarray:
        """Minus the interpolated gauge potential chi of the source, with zero mean.

        Since hs = h_coil - grad chi, starting from psi = -chi makes
        hs - grad psi the plain coil field whatever gauge the source uses,
        so iterations do not depend on that choice.
        """
        return self.zero_mean(-self.source.gauge_potential(self.lagrange_nodes))

    def zero_mean(self, psi: np.ndarray) -> np.ndarray:
        return psi - self.mean_weights @ psi

    def grad_psi(self, psi: np.ndarray) -> np.ndarray:
        return np.einsum("tqki,tk->tqi", self.grad_phi, psi[self.lagrange.cell_dofs])

    def energy_law_eval(self, b: np.ndarray):
        """w (T, Q), h (T, Q, 3), dh/db (T, Q, 3, 3) region by region."""
        T, Q = b.shape[:2]
        w = np.empty((T, Q))
        h = np.empty((T, Q, 3))
        H = np.empty((T, Q, 3, 3))
        for tag, idx in self.groups.items():
            law = self.laws[tag]
            w[idx], h[idx], H[idx] = map_elements(law.evaluate, len(idx), b[idx])
        return w, h, H

    def coenergy_law_eval(self, hfield: np.ndarray):
        T, Q = hfield.shape[:2]
        w = np.empty((T, Q))
        b = np.empty((T, Q, 3))
        H = np.empty((T, Q, 3, 3))
        for tag, idx in self.groups.items():
            law = self.laws[tag]
            w[idx], b[idx], H[idx] = map_elements(law.coenergy, len(idx), hfield[idx])
        return w, b, H

    def l2_norm(self, field: np.ndarray, region: int | None = None) -> float:
        """Discrete L2 norm of a vector field given at quadrature points."""
        sq = self.weights * np.einsum("tqi,tqi->tq", field, field)
        if region is not None:
            sq = sq[self.mesh.tet_tags == region]
        return float(np.sqrt(sq.sum()))
