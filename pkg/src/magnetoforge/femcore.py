"""Reference-element machinery: quadrature on the unit tetrahedron, Lagrange
P1/P2 bases, discontinuous vector polynomial bases, Whitney edge elements
and the global DOF maps built on top of them.

The reference tetrahedron is {x, y, z >= 0, x + y + z <= 1}; barycentric
coordinates are l0 = 1 - x - y - z, l1 = x, l2 = y, l3 = z.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import LOCAL_EDGES, Mesh

MAX_QUAD_DEGREE = 6

# reference gradients of the barycentric coordinates
GRAD_BARY = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (Q, 3) reference coordinates
    weights: np.ndarray  # (Q,), sum to 1/6
    degree: int

    def __len__(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature_tet(degree: int) -> QuadratureRule:
    """Positive-weight rule exact for polynomials of total degree ``degree``.

    Degrees 1 and 2 use the classical symmetric 1- and 4-point rules; higher
    degrees use a collapsed (conical) Gauss-Jacobi product rule.
    """
    if not 1 <= degree <= MAX_QUAD_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} (1..{MAX_QUAD_DEGREE})")
    if degree == 1:
        return QuadratureRule(np.full((1, 3), 0.25), np.array([1.0 / 6.0]), 1)
    if degree == 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        pts = np.array([[b, b, b], [a, b, b], [b, a, b], [b, b, a]])
        return QuadratureRule(pts, np.full(4, 1.0 / 24.0), 2)
    k = (degree + 2) // 2
    tu, wu = roots_jacobi(k, 2.0, 0.0)
    tv, wv = roots_jacobi(k, 1.0, 0.0)
    tw, ww = roots_jacobi(k, 0.0, 0.0)
    u, v, w = (0.5 * (t + 1.0) for t in (tu, tv, tw))
    wu, wv, ww = wu / 8.0, wv / 4.0, ww / 2.0
    U, V, W = np.meshgrid(u, v, w, indexing="ij")
    x = U
    y = V * (1.0 - U)
    z = W * (1.0 - U) * (1.0 - V)
    weights = np.einsum("i,j,k->ijk", wu, wv, ww).ravel()
    return QuadratureRule(np.column_stack([x.ravel(), y.ravel(), z.ravel()]), weights, degree)


def barycentric(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    return np.column_stack([1.0 - points.sum(axis=1), points])


def lagrange_basis(p: int, points: np.ndarray):
    """Values (Q, n) and reference gradients (Q, n, 3) of the P1/P2 basis.

    P2 ordering: four vertex functions, then six edge functions in the
    order of ``LOCAL_EDGES``.
    """
    lam = barycentric(points)
    nq = len(lam)
    if p == 1:
        return lam, np.broadcast_to(GRAD_BARY, (nq, 4, 3)).copy()
    if p != 2:
        raise ValueError(f"unsupported Lagrange degree {p}")
    vals = np.empty((nq, 10))
    grads = np.empty((nq, 10, 3))
    vals[:, :4] = lam * (2.0 * lam - 1.0)
    grads[:, :4] = (4.0 * lam - 1.0)[:, :, None] * GRAD_BARY[None]
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    vals[:, 4:] = 4.0 * lam[:, a] * lam[:, b]
    grads[:, 4:] = 4.0 * (lam[:, a, None] * GRAD_BARY[b][None] + lam[:, b, None] * GRAD_BARY[a][None])
    return vals, grads


def n_lagrange(p: int) -> int:
    return {1: 4, 2: 10}[p]


def vector_l2_basis(p_minus_1: int, points: np.ndarray) -> np.ndarray:
    """Discontinuous vector basis, shape (Q, n, 3); local dof = 3*k + i for
    scalar monomial k in (1, x, y, z) and Cartesian component i."""
    points = np.atleast_2d(points)
    if p_minus_1 == 0:
        scal = np.ones((len(points), 1))
    elif p_minus_1 == 1:
        scal = np.column_stack([np.ones(len(points)), points])
    else:
        raise ValueError(f"unsupported discontinuous degree {p_minus_1}")
    out = np.einsum("qk,ij->qkij", scal, np.eye(3))
    return out.reshape(len(points), -1, 3)


def n_vector_l2(p_minus_1: int) -> int:
    return 3 * (1 if p_minus_1 == 0 else 4)


def nedelec0_basis(points: np.ndarray, signs=None):
    """Whitney edge functions on the reference element.

    Returns values (Q, 6, 3) and curls (6, 3), both in reference
    coordinates and multiplied by the global orientation ``signs``.
    """
    lam = barycentric(points)
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    vals = lam[:, a, None] * GRAD_BARY[b][None] - lam[:, b, None] * GRAD_BARY[a][None]
    curls = 2.0 * np.cross(GRAD_BARY[a], GRAD_BARY[b])
    if signs is not None:
        s = np.asarray(signs, dtype=float)
        vals = vals * s[None, :, None]
        curls = curls * s[:, None]
    return vals, curls


@dataclass(frozen=True)
class DofMap:
    kind: str  # "lagrange" | "dg_vector" | "nedelec"
    degree: int
    cell_dofs: np.ndarray  # (T, n_local)
    n_dofs: int
    constant: np.ndarray | None = None  # coefficients of the constant 1 (Lagrange only)

    @property
    def n_local(self) -> int:
        return self.cell_dofs.shape[1]


def build_dofmap(mesh: Mesh, kind: str, p: int = 1) -> DofMap:
    """DOF map for ``kind`` in {"lagrange", "dg_vector", "nedelec"}.

    For "dg_vector", ``p`` is the mixed-method degree, so the local space is
    vector polynomials of degree p - 1.
    """
    T = mesh.n_tets
    if kind == "lagrange":
        if p == 1:
            cells = mesh.tets.copy()
            n = mesh.n_vertices
        elif p == 2:
            et = mesh.edge_table
            cells = np.hstack([mesh.tets, mesh.n_vertices + et.tet_edges])
            n = mesh.n_vertices + et.n_edges
        else:
            raise ValueError(f"unsupported Lagrange degree {p}")
        return DofMap(kind, p, cells, n, np.ones(n))
    if kind == "dg_vector":
        nloc = n_vector_l2(p - 1)
        cells = np.arange(T * nloc).reshape(T, nloc)
        return DofMap(kind, p - 1, cells, T * nloc)
    if kind == "nedelec":
        et = mesh.edge_table
        return DofMap(kind, 1, et.tet_edges.copy(), et.n_edges)
    raise ValueError(f"unknown space kind {kind!r}")


def assembly_degree(p: int) -> int:
    """Quadrature degree used for a degree-p discretization (>= 2p - 2).

    The 4-point rule serves p = 1 and 2: it samples h_s at four points per
    element, and at p = 2 its points are unisolvent for P_1, so the mixed
    flux equation holds pointwise and the mixed and scalar discrete
    problems share their solution.
    """
    return max(2, 2 * p - 2)
