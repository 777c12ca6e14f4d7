"""Vector potential formulation with lowest-order edge elements and a
tree-cotree gauge.

The tangential trace of a vanishes on the boundary (b . n = 0), so all
boundary edges are fixed; the gauge tree then spans the interior vertices
rooted at the boundary.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..femcore import nedelec0_basis
from ..mesh import EdgeTable, Mesh
from ..solver import pcg_deflated
from .common import Discretization, FieldState, assemble_matrix, assemble_vector


class GaugeError(ValueError):
    pass


@dataclass(frozen=True)
class Gauge:
    fixed: np.ndarray  # bool per edge: tree (and boundary) edges with zero DOF
    tree: np.ndarray  # indices of tree edges
    free: np.ndarray  # indices of cotree edges carrying unknowns

    @property
    def n_free(self) -> int:
        return len(self.free)


def boundary_edge_mask(mesh: Mesh, edges: EdgeTable) -> np.ndarray:
    tri = mesh.boundary_tris
    pairs = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [0, 2]], tri[:, [1, 2]]]), axis=1)
    keys = edges.edges[:, 0] * mesh.n_vertices + edges.edges[:, 1]
    return np.isin(keys, pairs[:, 0] * mesh.n_vertices + pairs[:, 1])


def tree_cotree(mesh: Mesh, edges: EdgeTable | None = None, boundary: bool = False) -> Gauge:
    """Breadth-first spanning tree of the vertex-edge graph.

    Without ``boundary`` the tree spans all vertices from vertex 0, leaving
    #edges - #vertices + 1 free edges.  With ``boundary`` all boundary edges
    are fixed as well and the tree grows from the boundary vertices into the
    interior, leaving #interior edges - #interior vertices free edges.
    """
    edges = edges or mesh.edge_table
    nv = mesh.n_vertices
    E = edges.edges
    order = np.argsort(np.concatenate([E[:, 0], E[:, 1]]), kind="stable")
    nbr = np.concatenate([E[:, 1], E[:, 0]])[order]
    eid = np.concatenate([np.arange(len(E)), np.arange(len(E))])[order]
    start = np.searchsorted(np.concatenate([E[:, 0], E[:, 1]])[order], np.arange(nv + 1))

    fixed = np.zeros(len(E), dtype=bool)
    visited = np.zeros(nv, dtype=bool)
    if boundary:
        fixed |= boundary_edge_mask(mesh, edges)
        roots = mesh.boundary_vertices
    else:
        roots = np.array([0])
    visited[roots] = True
    queue = deque(int(v) for v in roots)
    tree = []
    while queue:
        v = queue.popleft()
        for k in range(start[v], start[v + 1]):
            u = nbr[k]
            if not visited[u]:
                visited[u] = True
                tree.append(eid[k])
                queue.append(int(u))
    if not visited.all():
        raise GaugeError("mesh is not connected")
    tree = np.array(sorted(tree), dtype=np.int64)
    fixed[tree] = True
    return Gauge(fixed=fixed, tree=tree, free=np.nonzero(~fixed)[0])


class VectorFormulation:
    name = "vector"

    def __init__(self, disc: Discretization, gauge: Gauge | None = None):
        self.disc = disc
        mesh = disc.mesh
        self.edges = mesh.edge_table
        self.gauge = gauge or tree_cotree(mesh, self.edges, boundary=True)
        self.n_edges = self.edges.n_edges
        self.free = self.gauge.free
        self.n_free = len(self.free)
        # map global edge -> unknown index (-1 if fixed)
        self.unknown = -np.ones(self.n_edges, dtype=np.int64)
        self.unknown[self.free] = np.arange(self.n_free)

    @property
    def dofs(self) -> dict:
        return {"edges": self.n_edges, "free": self.n_free, "total": self.n_edges}

    @property
    def n_unknowns(self) -> int:
        return self.n_free

    @cached_property
    def curls(self) -> np.ndarray:
        """Physical curls of the six oriented edge functions, (T, 6, 3)."""
        m = self.disc.mesh
        _, ref = nedelec0_basis(np.zeros((1, 3)))
        phys = np.einsum("tij,kj->tki", m.jacobians, ref) / m.dets[:, None, None]
        return phys * self.edges.signs[:, :, None]

    def initial_state(self):
        return np.zeros(self.n_free)

    def full(self, x) -> np.ndarray:
        a = np.zeros(self.n_edges)
        a[self.free] = x
        return a

    def state(self, x) -> FieldState:
        return FieldState("vector", a=self.full(x))

    def curl_a(self, x) -> np.ndarray:
        """Element-wise constant curl a, (T, 3)."""
        a = self.full(x)
        return np.einsum("tki,tk->ti", self.curls, a[self.edges.tet_edges])

    def b_field(self, x) -> np.ndarray:
        Q = len(self.disc.rule)
        return np.repeat(self.curl_a(x)[:, None, :], Q, axis=1)

    def _restrict_cells(self):
        return self.unknown[self.edges.tet_edges]

    def residual_jacobian(self, x, with_jacobian: bool = True):
        """r = <hs - dw(curl a), curl a'> on free edges, K = <d2w curl da, curl a'>."""
        d = self.disc
        _, h, H = d.energy_law_eval(self.b_field(x))
        loc = np.einsum("tq,tqi,tki->tk", d.weights, d.hs - h, self.curls)
        cells = self._restrict_cells()
        mask = cells >= 0
        safe = np.where(mask, cells, self.n_free)
        r = assemble_vector(safe, loc * mask, self.n_free + 1)[:-1]
        if not with_jacobian:
            return r, None
        K_loc = np.einsum("tq,tki,tqij,tlj->tkl", d.weights, self.curls, H, self.curls)
        K_loc = 0.5 * (K_loc + K_loc.transpose(0, 2, 1))
        K_loc = K_loc * (mask[:, :, None] & mask[:, None, :])
        K = assemble_matrix(safe, K_loc, self.n_free + 1)[:-1, :-1].tocsr()
        return r, K

    def residual(self, x):
        return self.residual_jacobian(x, with_jacobian=False)[0]

    def energy(self, x) -> float:
        d = self.disc
        bq = self.b_field(x)
        w, _, _ = d.energy_law_eval(bq)
        return float((d.weights * (w - np.einsum("tqi,tqi->tq", d.hs, bq))).sum())

    def direction(self, x, config):
        r, K = self.residual_jacobian(x)
        da, its, relres = pcg_deflated(K, r, tol=config.cg_tol_rel, max_iter=config.cg_max_iter)
        return da, {"cg_iterations": its, "cg_rel_residual": relres}

    def slope(self, x, dx) -> float:
        return -float(self.residual(x) @ dx)

    def update(self, x, dx, tau):
        return x + tau * dx

    def h_field(self, x) -> np.ndarray:
        _, h, _ = self.disc.energy_law_eval(self.b_field(x))
        return h

