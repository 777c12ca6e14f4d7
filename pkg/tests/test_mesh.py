import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magnetoforge.mesh import (LOCAL_EDGES, Mesh, MeshError, MeshParseError, MeshTopologyError, build_edge_table,
                               build_mesh, element_geometry, generate_box, graded_axis, load_msh, write_msh)

from conftest import REF_TET

REF_MSH = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
$EndNodes
$Elements
5
1 2 2 1 1 1 2 3
2 2 2 1 1 1 2 4
3 2 2 1 1 1 3 4
4 2 2 1 1 2 3 4
5 4 2 7 7 {tet}
$EndElements
"""


def _tri_area_sum(mesh):
    v = mesh.vertices[mesh.boundary_tris]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1).sum()


# -- load_msh -------------------------------------------------------------------

def test_load_reference_tet(tmp_path):
    path = tmp_path / "ref.msh"
    path.write_text(REF_MSH.format(tet="1 2 3 4"))
    m = load_msh(path)
    assert (m.n_vertices, m.n_tets, len(m.boundary_tris)) == (4, 1, 4)
    assert m.tet_tags.tolist() == [7]
    assert m.volumes[0] == pytest.approx(1 / 6)


def test_load_reorients_negative_tet(tmp_path):
    path = tmp_path / "neg.msh"
    path.write_text(REF_MSH.format(tet="1 2 4 3"))
    m = load_msh(path)
    assert m.dets[0] > 0
    assert m.volumes[0] == pytest.approx(1 / 6)


def test_load_missing_node_is_topology_error(tmp_path):
    path = tmp_path / "bad.msh"
    path.write_text(REF_MSH.format(tet="1 2 3 4").replace("4 2 2 1 1 2 3 4", "4 2 2 1 1 2 3 9"))
    with pytest.raises(MeshTopologyError):
        load_msh(path)


def test_load_malformed_is_parse_error(tmp_path):
    path = tmp_path / "bad.msh"
    path.write_text(REF_MSH.format(tet="1 2 3 x"))
    with pytest.raises(MeshParseError):
        load_msh(path)
    path.write_text("$Nodes\n0\n$EndNodes\n")
    with pytest.raises(MeshParseError):
        load_msh(path)


def test_load_drops_unreferenced_nodes(tmp_path):
    text = REF_MSH.format(tet="1 2 3 4").replace("4\n1 0 0 0", "5\n1 0 0 0").replace(
        "4 0 0 1\n$EndNodes", "4 0 0 1\n5 3 3 3\n$EndNodes")
    path = tmp_path / "extra.msh"
    path.write_text(text)
    assert load_msh(path).n_vertices == 4


def test_dangling_boundary_triangle():
    with pytest.raises(MeshTopologyError):
        build_mesh(np.vstack([REF_TET, [[1.0, 1.0, 1.0]]]), [[0, 1, 2, 3], [1, 2, 3, 4]], [1, 1],
                   boundary_tris=[[0, 1, 4]], boundary_tags=[1])


def test_non_manifold_face():
    verts = np.vstack([REF_TET, [[1.0, 1.0, 1.0], [0.6, 0.6, 0.6]]])
    with pytest.raises(MeshTopologyError):
        build_mesh(verts, [[0, 1, 2, 3], [1, 2, 3, 4], [1, 2, 3, 5]], [1, 1, 1])


def test_empty_and_degenerate():
    with pytest.raises(MeshTopologyError):
        build_mesh(REF_TET, np.zeros((0, 4), dtype=int), [])
    flat = REF_TET.copy()
    flat[3] = [0.3, 0.3, 0.0]
    with pytest.raises(MeshTopologyError):
        build_mesh(flat, [[0, 1, 2, 3]], [1])


def test_write_read_round_trip(tmp_path):
    m = generate_box(2, ((0.0, 0.0, 0.0), (0.5, 0.5, 0.5)))
    write_msh(m, tmp_path / "box.msh")
    m2 = load_msh(tmp_path / "box.msh")
    np.testing.assert_array_equal(m2.tets, m.tets)
    np.testing.assert_array_equal(m2.tet_tags, m.tet_tags)
    np.testing.assert_allclose(m2.vertices, m.vertices, rtol=0, atol=0)
    assert m2.region_names == m.region_names


# -- generate_box -----------------------------------------------------------------

def test_box_counts():
    m1 = generate_box(1)
    assert (m1.n_vertices, m1.n_tets, len(m1.boundary_tris)) == (8, 6, 12)
    assert generate_box(2).n_tets == 48
    m4 = generate_box(4, ((0.25, 0.25, 0.25), (0.75, 0.75, 0.75)))
    assert m4.n_tets == 384
    assert int((m4.tet_tags == 2).sum()) == 48
    assert m4.region_names == {1: "air", 2: "steel"}
    assert np.all(m4.boundary_tags == 1)


def test_box_rejects_off_grid_inclusion():
    with pytest.raises(MeshError):
        generate_box(6, ((0.25, 0.25, 0.25), (0.75, 0.75, 0.75)))
    with pytest.raises(MeshError):
        generate_box(4, ((0.5, 0.5, 0.5), (0.25, 0.75, 0.75)))
    with pytest.raises(MeshError):
        generate_box(0)


@pytest.mark.parametrize("n", [4, 6, 8])
def test_graded_box_snaps_inclusion(n):
    lo, hi = 0.25, 0.75
    m = generate_box(n, ((lo,) * 3, (hi,) * 3), graded=True)
    assert m.n_tets == 6 * n**3
    steel = m.tet_tags == 2
    assert m.volumes[steel].sum() == pytest.approx((hi - lo) ** 3, rel=1e-12)
    assert m.volumes.sum() == pytest.approx(1.0, rel=1e-12)


def test_graded_axis():
    ax = graded_axis(6, [0.25, 0.75])
    assert len(ax) == 7
    assert {0.25, 0.75} <= set(ax.tolist())
    assert np.all(np.diff(ax) > 0)
    np.testing.assert_allclose(graded_axis(4, []), np.linspace(0, 1, 5))
    with pytest.raises(MeshError):
        graded_axis(2, [0.25, 0.75])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.booleans())
def test_box_invariants(n, with_incl):
    incl = ((0.0, 0.0, 0.0), (1.0 / n, 1.0, 1.0)) if with_incl else None
    m = generate_box(n, incl)
    assert np.all(m.dets > 0)
    assert m.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    assert _tri_area_sum(m) == pytest.approx(6.0, rel=1e-12)
    n_int, n_bnd = m.face_counts()
    assert 4 * m.n_tets == 2 * n_int + n_bnd
    assert n_bnd == len(m.boundary_tris)
    # Euler characteristic of a ball
    assert m.n_vertices - m.edge_table.n_edges + (n_int + n_bnd) - m.n_tets == 1


# -- element geometry and edges ---------------------------------------------------

def test_element_geometry(ref_tet):
    g = element_geometry(ref_tet, 0)
    np.testing.assert_allclose(g.jacobian, np.eye(3))
    assert g.det == pytest.approx(1.0)
    big = build_mesh(2.0 * REF_TET, [[0, 1, 2, 3]], [1])
    g2 = element_geometry(big, 0)
    assert g2.det == pytest.approx(8.0)
    assert g2.volume == pytest.approx(8 / 6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_element_map_round_trip(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((4, 3))
    if abs(np.linalg.det(v[1:] - v[0])) < 1e-3:
        return
    m = build_mesh(v, [[0, 1, 2, 3]], [1])
    g = element_geometry(m, 0)
    np.testing.assert_allclose(g.map(REF_TET), m.vertices[m.tets[0]], atol=1e-14)
    np.testing.assert_allclose(g.inv_t, np.linalg.inv(g.jacobian).T, rtol=1e-12)
    assert g.det > 0


def test_edge_table_counts(ref_tet):
    assert ref_tet.edge_table.n_edges == 6
    et = build_edge_table(generate_box(1))
    assert et.n_edges == 19
    assert np.all(et.edges[:, 0] < et.edges[:, 1])
    assert len(np.unique(et.edges, axis=0)) == et.n_edges
    for row in et.tet_edges:
        assert len(set(row.tolist())) == 6


def test_edge_signs_follow_local_order():
    m = generate_box(2)
    et = m.edge_table
    local = m.tets[:, LOCAL_EDGES]
    np.testing.assert_array_equal(et.signs, np.where(local[:, :, 0] < local[:, :, 1], 1, -1))


def test_flipping_two_labels_flips_changed_edges():
    tets = np.array([[3, 0, 2, 1]])
    m = Mesh(REF_TET, tets, np.array([1]), np.zeros((0, 3), dtype=int), np.zeros(0, dtype=int), {})
    swapped = tets[:, [1, 0, 2, 3]]
    m2 = Mesh(REF_TET, swapped, np.array([1]), np.zeros((0, 3), dtype=int), np.zeros(0, dtype=int), {})
    s1 = {tuple(sorted(tets[0, e])): (sg, tuple(tets[0, e])) for e, sg in zip(LOCAL_EDGES, build_edge_table(m).signs[0])}
    s2 = {tuple(sorted(swapped[0, e])): (sg, tuple(swapped[0, e])) for e, sg in zip(LOCAL_EDGES, build_edge_table(m2).signs[0])}
    for key in s1:
        (g1, d1), (g2, d2) = s1[key], s2[key]
        assert (g1 != g2) == (d1 != d2)
