"""Tetrahedral meshes: Gmsh 2.2 ASCII I/O, a structured box generator and
the geometric/topological queries used by the finite element layer.

Vertices are stored in meters.  Every tetrahedron is positively oriented
after construction, so element Jacobians always have positive determinant.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# local edge (a, b) of a tetrahedron, always a < b in local numbering
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
# local face k is opposite to local vertex k
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

AIR, STEEL = 1, 2


class MeshError(ValueError):
    """Base class for mesh construction failures."""


class MeshParseError(MeshError):
    pass


class MeshTopologyError(MeshError):
    pass


@dataclass(frozen=True)
class ElementGeometry:
    vertices: np.ndarray  # (4, 3)
    jacobian: np.ndarray  # (3, 3), columns are v1-v0, v2-v0, v3-v0
    det: float
    inv_t: np.ndarray  # inverse transpose of the Jacobian

    @property
    def volume(self) -> float:
        return self.det / 6.0

    def map(self, ref_points: np.ndarray) -> np.ndarray:
        """Map reference coordinates (..., 3) to physical coordinates."""
        return self.vertices[0] + np.asarray(ref_points) @ self.jacobian.T


@dataclass(frozen=True)
class EdgeTable:
    edges: np.ndarray  # (E, 2), lower vertex index first
    tet_edges: np.ndarray  # (T, 6) global edge index per local edge
    signs: np.ndarray  # (T, 6) +1 if local direction matches global low->high

    @property
    def n_edges(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    tets: np.ndarray
    tet_tags: np.ndarray
    boundary_tris: np.ndarray
    boundary_tags: np.ndarray
    region_names: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def regions(self) -> list[int]:
        return sorted(int(t) for t in np.unique(self.tet_tags))

    @cached_property
    def jacobians(self) -> np.ndarray:
        v = self.vertices[self.tets]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)

    @cached_property
    def dets(self) -> np.ndarray:
        return np.linalg.det(self.jacobians)

    @cached_property
    def inv_t(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians).transpose(0, 2, 1)

    @cached_property
    def volumes(self) -> np.ndarray:
        return self.dets / 6.0

    @cached_property
    def edge_table(self) -> EdgeTable:
        return build_edge_table(self)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_tris)

    def boundary_area(self) -> float:
        v = self.vertices[self.boundary_tris]
        cr = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return 0.5 * float(np.linalg.norm(cr, axis=1).sum())

    def bounding_box_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def face_counts(self) -> tuple[int, int]:
        """Return (#interior faces, #boundary faces) from tet adjacency."""
        _, counts = _unique_faces(self.tets)
        return int((counts == 2).sum()), int((counts == 1).sum())

    def summary(self) -> dict:
        n_int, n_bnd = self.face_counts()
        return {
            "vertices": self.n_vertices,
            "tets": self.n_tets,
            "edges": self.edge_table.n_edges,
            "interior_faces": n_int,
            "boundary_faces": n_bnd,
            "boundary_triangles": len(self.boundary_tris),
            "volume": float(self.volumes.sum()),
            "boundary_area": self.boundary_area(),
            "regions": {str(t): int((self.tet_tags == t).sum()) for t in self.regions},
            "region_names": {str(k): v for k, v in self.region_names.items()},
        }


def _unique_faces(tets: np.ndarray):
    faces = np.sort(tets[:, LOCAL_FACES].reshape(-1, 3), axis=1)
    uniq, inverse, counts = np.unique(faces, axis=0, return_inverse=True, return_counts=True)
    return (uniq, inverse.reshape(-1)), counts


def build_mesh(vertices, tets, tet_tags, boundary_tris=None, boundary_tags=None,
               region_names=None) -> Mesh:
    """Validate raw arrays and return a consistently oriented Mesh.

    Unreferenced vertices are dropped.  Boundary faces of the tetrahedra
    that are missing from ``boundary_tris`` are added with tag 0; listed
    triangles that are interior faces (e.g. material interfaces) are
    dropped.
    """
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    tets = np.asarray(tets, dtype=np.int64).reshape(-1, 4)
    tet_tags = np.asarray(tet_tags, dtype=np.int64).reshape(-1)
    if boundary_tris is None:
        boundary_tris = np.zeros((0, 3), dtype=np.int64)
        boundary_tags = np.zeros(0, dtype=np.int64)
    boundary_tris = np.asarray(boundary_tris, dtype=np.int64).reshape(-1, 3)
    boundary_tags = np.asarray(boundary_tags, dtype=np.int64).reshape(-1)

    if len(tets) == 0:
        raise MeshTopologyError("mesh contains no tetrahedra")
    if len(tet_tags) != len(tets) or len(boundary_tags) != len(boundary_tris):
        raise MeshError("tag arrays do not match element arrays")
    nv = len(vertices)
    for name, arr in (("tetrahedron", tets), ("boundary triangle", boundary_tris)):
        if arr.size and (arr.min() < 0 or arr.max() >= nv):
            raise MeshTopologyError(f"{name} references a vertex index out of range")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("non-finite vertex coordinates")

    # drop unreferenced vertices
    used = np.unique(tets)
    if len(used) < nv:
        renumber = -np.ones(nv, dtype=np.int64)
        renumber[used] = np.arange(len(used))
        if boundary_tris.size and np.any(renumber[boundary_tris] < 0):
            raise MeshTopologyError("boundary triangle uses a vertex not belonging to any tetrahedron")
        vertices = vertices[used]
        tets = renumber[tets]
        boundary_tris = renumber[boundary_tris]

    # orientation and degeneracy
    v = vertices[tets]
    det = np.einsum("ij,ij->i", v[:, 1] - v[:, 0], np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]))
    diag = np.linalg.norm(vertices.max(0) - vertices.min(0))
    if np.any(np.abs(det) / 6.0 <= 1e-14 * diag**3):
        bad = int(np.argmin(np.abs(det)))
        raise MeshTopologyError(f"degenerate tetrahedron {bad}")
    flip = det < 0
    if flip.any():
        tets = tets.copy()
        tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()

    (faces, inverse), counts = _unique_faces(tets)
    if np.any(counts > 2):
        raise MeshTopologyError("non-manifold face shared by more than two tetrahedra")
    bnd_faces = faces[counts == 1]

    # match listed triangles against tet faces
    tags = np.zeros(len(bnd_faces), dtype=np.int64)
    if len(boundary_tris):
        listed = np.sort(boundary_tris, axis=1)
        all_keys = {tuple(f): i for i, f in enumerate(faces)}
        bnd_index = -np.ones(len(faces), dtype=np.int64)
        bnd_index[counts == 1] = np.arange(len(bnd_faces))
        n_interior = 0
        for tri, tag in zip(listed, boundary_tags):
            k = all_keys.get(tuple(tri))
            if k is None:
                raise MeshTopologyError(f"dangling boundary triangle {tuple(int(i) for i in tri)}")
            if counts[k] == 2:
                n_interior += 1
                continue
            tags[bnd_index[k]] = tag
        if n_interior:
            logger.info("dropped %d tagged interior faces", n_interior)
    return Mesh(vertices=vertices, tets=tets, tet_tags=tet_tags, boundary_tris=bnd_faces,
                boundary_tags=tags, region_names=dict(region_names or {}))


def _section(lines: list[str], name: str) -> list[str] | None:
    try:
        start = lines.index(f"${name}")
    except ValueError:
        return None
    try:
        end = lines.index(f"$End{name}", start)
    except ValueError:
        raise MeshParseError(f"unterminated section ${name}") from None
    return lines[start + 1:end]


def load_msh(path) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII file with tetrahedra and boundary triangles."""
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    fmt = _section(lines, "MeshFormat")
    if not fmt:
        raise MeshParseError("missing $MeshFormat section")
    parts = fmt[0].split()
    if len(parts) < 3 or not parts[0].startswith("2") or parts[1] != "0":
        raise MeshParseError(f"unsupported mesh format {fmt[0]!r} (need 2.2 ASCII)")

    names = {}
    phys = _section(lines, "PhysicalNames")
    if phys:
        for ln in phys[1:]:
            dim, tag, name = ln.split(maxsplit=2)
            if int(dim) == 3:
                names[int(tag)] = name.strip('"')

    nodes = _section(lines, "Nodes")
    elems = _section(lines, "Elements")
    if nodes is None or elems is None:
        raise MeshParseError("missing $Nodes or $Elements section")
    try:
        n_nodes = int(nodes[0])
        if len(nodes) - 1 != n_nodes:
            raise MeshParseError(f"expected {n_nodes} nodes, found {len(nodes) - 1}")
        node_ids = {}
        coords = np.empty((n_nodes, 3))
        for i, ln in enumerate(nodes[1:]):
            tok = ln.split()
            node_ids[int(tok[0])] = i
            coords[i] = [float(t) for t in tok[1:4]]

        n_elems = int(elems[0])
        if len(elems) - 1 != n_elems:
            raise MeshParseError(f"expected {n_elems} elements, found {len(elems) - 1}")
        tets, tet_tags, tris, tri_tags = [], [], [], []
        for ln in elems[1:]:
            tok = [int(t) for t in ln.split()]
            etype, ntags = tok[1], tok[2]
            tag = tok[3] if ntags > 0 else 0
            conn = tok[3 + ntags:]
            if etype == 4:
                tets.append(conn[:4])
                tet_tags.append(tag)
            elif etype == 2:
                tris.append(conn[:3])
                tri_tags.append(tag)
    except (ValueError, IndexError) as exc:
        raise MeshParseError(f"malformed mesh file: {exc}") from exc

    def to_index(conn, what):
        try:
            return np.array([[node_ids[c] for c in row] for row in conn], dtype=np.int64)
        except KeyError as exc:
            raise MeshTopologyError(f"{what} references missing node {exc.args[0]}") from None

    if not tets:
        raise MeshTopologyError("mesh contains no tetrahedra")
    return build_mesh(coords, to_index(tets, "tetrahedron"), tet_tags,
                      to_index(tris, "boundary triangle").reshape(-1, 3), tri_tags, names)


def write_msh(mesh: Mesh, path) -> None:
    """Write the mesh in Gmsh MSH 2.2 ASCII format (1-based numbering)."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat"]
    if mesh.region_names:
        out += ["$PhysicalNames", str(len(mesh.region_names))]
        out += [f'3 {k} "{v}"' for k, v in sorted(mesh.region_names.items())]
        out.append("$EndPhysicalNames")
    out += ["$Nodes", str(mesh.n_vertices)]
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.vertices.tolist())]
    out += ["$EndNodes", "$Elements", str(len(mesh.boundary_tris) + mesh.n_tets)]
    k = 1
    for tri, tag in zip(mesh.boundary_tris.tolist(), mesh.boundary_tags.tolist()):
        out.append(f"{k} 2 2 {tag} {tag} " + " ".join(str(i + 1) for i in tri))
        k += 1
    for tet, tag in zip(mesh.tets.tolist(), mesh.tet_tags.tolist()):
        out.append(f"{k} 4 2 {tag} {tag} " + " ".join(str(i + 1) for i in tet))
        k += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


def graded_axis(n: int, breaks) -> np.ndarray:
    """n cells on [0, 1] whose nodes include every breakpoint.

    Cells are shared out among the sub-intervals in proportion to their
    length (largest remainder, at least one each) and spaced uniformly
    inside each sub-interval.
    """
    pts = np.unique(np.clip(np.concatenate([[0.0, 1.0], np.ravel(breaks)]), 0.0, 1.0))
    lengths = np.diff(pts)
    if n < len(lengths):
        raise MeshError(f"n={n} is too small to resolve {len(lengths)} axis intervals")
    share = lengths * n
    counts = np.maximum(np.floor(share).astype(int), 1)
    while counts.sum() < n:
        counts[np.argmax(share - counts)] += 1
    while counts.sum() > n:
        k = np.argmax(np.where(counts > 1, counts - share, -np.inf))
        counts[k] -= 1
    parts = [np.linspace(a, b, c + 1)[:-1] for a, b, c in zip(pts[:-1], pts[1:], counts)]
    return np.concatenate(parts + [[1.0]])


def generate_box(n: int, inclusion=None, graded: bool = False) -> Mesh:
    """Unit cube split into n^3 boxes, six Kuhn tetrahedra each.

    ``inclusion`` is an optional pair of corners ((x0, y0, z0), (x1, y1, z1));
    tetrahedra inside it get tag 2 ("steel"), the rest tag 1 ("air").  All
    cube faces get boundary tag 1.  By default the grid is uniform and the
    corners must lie on it.  With ``graded`` each axis still has n cells,
    but their nodes are placed so that the inclusion faces are grid planes.
    """
    if n < 1:
        raise MeshError("n must be >= 1")
    lo = hi = None
    if inclusion is not None:
        lo, hi = (np.asarray(c, dtype=float) for c in inclusion)
        if np.any(hi <= lo):
            raise MeshError("inclusion box is empty")
        for c in (lo, hi):
            if np.any(c < 0) or np.any(c > 1):
                raise MeshError(f"inclusion corner {c.tolist()} lies outside the unit cube")
            if not graded and np.any(np.abs(c * n - np.round(c * n)) > 1e-9):
                raise MeshError(f"inclusion corner {c.tolist()} is not on the {n}-grid")

    if graded and lo is not None:
        axes = [graded_axis(n, [lo[i], hi[i]]) for i in range(3)]
    else:
        axes = [np.linspace(0.0, 1.0, n + 1)] * 3
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    I, J, K = (a.ravel() for a in np.meshgrid(*(np.arange(n),) * 3, indexing="ij"))
    tets = []
    for perm in itertools.permutations(range(3)):
        corners = [np.zeros(3, dtype=int)]
        for ax in perm:
            c = corners[-1].copy()
            c[ax] = 1
            corners.append(c)
        tets.append(np.stack([vid(I + c[0], J + c[1], K + c[2]) for c in corners], axis=1))
    tets = np.stack(tets, axis=1).reshape(-1, 4)

    tags = np.full(len(tets), AIR, dtype=np.int64)
    names = {AIR: "air"}
    if lo is not None:
        cen = vertices[tets].mean(axis=1)
        inside = np.all((cen > lo) & (cen < hi), axis=1)
        tags[inside] = STEEL
        names[STEEL] = "steel"
    mesh = build_mesh(vertices, tets, tags, region_names=names)
    return Mesh(mesh.vertices, mesh.tets, mesh.tet_tags, mesh.boundary_tris,
                np.ones(len(mesh.boundary_tris), dtype=np.int64), mesh.region_names)


def element_geometry(mesh: Mesh, t: int) -> ElementGeometry:
    return ElementGeometry(vertices=mesh.vertices[mesh.tets[t]], jacobian=mesh.jacobians[t],
                           det=float(mesh.dets[t]), inv_t=mesh.inv_t[t])


def build_edge_table(mesh: Mesh) -> EdgeTable:
    local = mesh.tets[:, LOCAL_EDGES]  # (T, 6, 2)
    lo = local.min(axis=2)
    hi = local.max(axis=2)
    keys = np.stack([lo, hi], axis=2).reshape(-1, 2)
    edges, inverse = np.unique(keys, axis=0, return_inverse=True)
    signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)
    return EdgeTable(edges=edges, tet_edges=inverse.reshape(-1, 6), signs=signs)
